use std::sync::Arc;

use rffence_core::quietzone::QzOptimizerParams;
use rffence_core::shield::{self, ShieldParams};
use rffence_core::{
    build_codebook, run_quiet_zone, wavelength_from_frequency, AngularGrid, ArrayDescriptor, Codebook, Direction,
    DualVolumeGrid, FarFieldConfig, PointSource, Refinement, RisArray, Scene, Vec3,
};

fn thz(n: usize) -> ArrayDescriptor {
    let f = 1e12;
    let pitch = wavelength_from_frequency(f) / 5.0;
    ArrayDescriptor::new(RisArray::planar(n, n, pitch, pitch).unwrap(), FarFieldConfig::default(), f).unwrap()
}

#[test]
fn codebook_survives_disk_and_serves_shield() {
    let desc = thz(12);
    let aoa = Direction::from_degrees(10.0, 20.0);
    let aods = [(30.0, 75.0), (15.0, 165.0), (20.0, 300.0), (40.0, 45.0)];
    let pairs: Vec<_> = aods.iter().map(|&(t, p)| (aoa, Direction::from_degrees(t, p))).collect();
    let book = build_codebook(&desc, &pairs).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.rfcb");
    book.save(&path).unwrap();
    let book = Codebook::load(&path).unwrap();

    let pick = |t, p| book.lookup(aoa, Direction::from_degrees(t, p)).unwrap();
    let entries = [pick(30.0, 75.0), pick(15.0, 165.0), pick(40.0, 45.0)];
    let grid = Arc::new(AngularGrid::with_resolution(2f64.to_radians()).unwrap());
    let params = ShieldParams {
        d: 2,
        u: 1,
        ..ShieldParams::default()
    };
    let r = shield::run(book.descriptor(), &entries, &grid, &params).unwrap();
    let hssa = r.suppression().next().unwrap();
    assert!(hssa.p_db < -20.0, "{}", hssa.p_db);
    assert!(r.final_cost < r.initial_cost);
    for f in r.delivery() {
        assert!(f.p_db > -12.0, "{}", f.p_db);
    }
}

#[test]
fn shield_is_deterministic() {
    let desc = thz(10);
    let aoa = Direction::from_degrees(5.0, 0.0);
    let pairs: Vec<_> = [(30.0, 75.0), (15.0, 165.0), (15.0, 45.0)]
        .iter()
        .map(|&(t, p)| (aoa, Direction::from_degrees(t, p)))
        .collect();
    let book = build_codebook(&desc, &pairs).unwrap();
    let refs: Vec<_> = book.entries().iter().collect();
    let grid = Arc::new(AngularGrid::with_resolution(3f64.to_radians()).unwrap());
    let params = ShieldParams::default();
    let a = shield::run(&desc, &refs, &grid, &params).unwrap();
    let b = shield::run(&desc, &refs, &grid, &params).unwrap();
    assert_eq!(a.phi_opt, b.phi_opt);
    assert_eq!(a.cost_history, b.cost_history);
}

#[test]
fn small_room_quiet_zone_end_to_end() {
    let src = PointSource::new(1.0, 28e9, Vec3::new(1.6, 0.5, 1.0)).unwrap();
    let scene = Scene::enclosed(2.0, 6, 6, 0.1, src).unwrap();
    let grid = Arc::new(
        DualVolumeGrid::build(2.0, [15; 3], Vec3::new(1.0, 1.2, 1.0), 0.3, Refinement::TargetPoints(200)).unwrap(),
    );
    assert!(grid.fine_points().len() >= 200);
    let params = QzOptimizerParams {
        max_iterations: 60,
        self_check: true,
        ..QzOptimizerParams::default()
    };
    let o = run_quiet_zone(&scene, &grid, &params).unwrap();
    let init = o.init_metrics.suppression_db.unwrap();
    let fin = o.final_metrics.suppression_db.unwrap();
    assert!(init < 0.0, "{init}");
    assert!(fin < init - 5.0, "{fin} vs {init}");
    assert!(o.outside_change_db.abs() < 3.0, "{}", o.outside_change_db);
    // power never rises across sweeps
    let p: Vec<f64> = o.descent.history.iter().map(|h| h.metrics.avg_power).collect();
    assert!(p.windows(2).all(|w| w[1] <= w[0]));
    // the reported zone field is what the final phases produce
    let fine_mean = o.optimized.fine().iter().map(|v| v.norm()).sum::<f64>() / o.optimized.fine().len() as f64;
    assert!((fine_mean - o.final_metrics.avg_magnitude).abs() <= 1e-9 * fine_mean.max(1e-300));
}
