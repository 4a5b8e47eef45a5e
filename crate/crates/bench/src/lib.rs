//! Shared fixtures for the benches in `benches/`.

use rffence_core::{
    generate_entry, wavelength_from_frequency, ArrayDescriptor, CodebookEntry, Direction, FarFieldConfig,
    PointSource, RisArray, Scene, Vec3,
};

/// `n x n` array at 1 THz with lambda/5 pitch.
pub fn thz_descriptor(n: usize) -> ArrayDescriptor {
    let f = 1e12;
    let pitch = wavelength_from_frequency(f) / 5.0;
    let array = RisArray::planar(n, n, pitch, pitch).expect("valid array");
    ArrayDescriptor::new(array, FarFieldConfig::default(), f).expect("valid descriptor")
}

/// Two delivery beams and one suppression beam sharing a broadside AoA.
pub fn slicing_entries(desc: &ArrayDescriptor) -> Vec<CodebookEntry> {
    let aoa = Direction::from_degrees(0.0, 0.0);
    [(30.0, 75.0), (15.0, 165.0), (15.0, 45.0)]
        .iter()
        .map(|&(t, p)| generate_entry(desc, aoa, Direction::from_degrees(t, p)).expect("valid entry"))
        .collect()
}

/// The 4 m room with four `n x n` panels at 28 GHz.
pub fn desk_scene(n: usize) -> Scene {
    let src = PointSource::new(1.0, 28e9, Vec3::new(3.0, 1.0, 1.0)).expect("valid source");
    Scene::enclosed(4.0, n, n, 0.1, src).expect("valid scene")
}
