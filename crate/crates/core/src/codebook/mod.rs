//! Precomputed beam-steering profiles keyed by (AoA, AoD).

mod format;

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::path::Path;

use rayon::prelude::*;

pub use format::{FormatError, FORMAT_VERSION, MAGIC};

use crate::error::{invalid, Error, Result};
use crate::farfield::{coherence_bound, field_at_poi, steering_profile, Direction, FarFieldConfig};
use crate::geometry::{wavelength_from_frequency, PlaneWaveSource, RisArray};
use crate::phase::PhaseProfile;

/// The array a codebook was compiled for.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayDescriptor {
    pub array: RisArray,
    pub config: FarFieldConfig,
    pub frequency: f64,
}

impl ArrayDescriptor {
    pub fn new(array: RisArray, config: FarFieldConfig, frequency: f64) -> Result<Self> {
        config.validate()?;
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(invalid("frequency", format!("{frequency} must be positive")));
        }
        Ok(Self {
            array,
            config,
            frequency,
        })
    }

    pub fn wavelength(&self) -> f64 {
        wavelength_from_frequency(self.frequency)
    }

    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength()
    }

    /// Unit-amplitude plane wave arriving from `aoa`.
    pub fn source(&self, aoa: Direction) -> Result<PlaneWaveSource> {
        PlaneWaveSource::new(1.0, self.wavelength(), aoa.theta, aoa.phi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookEntry {
    pub aoa: Direction,
    pub aod: Direction,
    pub phase: PhaseProfile,
    /// `|E|` at the AoD under this entry's own profile.
    pub initial_poi: f64,
}

impl CodebookEntry {
    fn key(&self) -> Key {
        key_of(self.aoa, self.aod)
    }
}

type Key = [u64; 4];

fn key_of(aoa: Direction, aod: Direction) -> Key {
    [
        aoa.theta.to_bits(),
        aoa.phi.to_bits(),
        aod.theta.to_bits(),
        aod.phi.to_bits(),
    ]
}

/// Phase-conjugate entry for one (AoA, AoD) pair.
pub fn generate_entry(
    desc: &ArrayDescriptor,
    aoa: Direction,
    aod: Direction,
) -> Result<CodebookEntry> {
    aod.validate()?;
    let src = desc.source(aoa)?;
    let phase = steering_profile(&desc.array, desc.wavenumber(), aoa, aod);
    let initial_poi = field_at_poi(&desc.array, &phase, &src, &desc.config, aod)?.magnitude;
    Ok(CodebookEntry {
        aoa,
        aod,
        phase,
        initial_poi,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    descriptor: ArrayDescriptor,
    entries: Vec<CodebookEntry>,
    index: HashMap<Key, usize>,
}

/// Builds entries in parallel; output order follows `pairs`.
pub fn build_codebook(desc: &ArrayDescriptor, pairs: &[(Direction, Direction)]) -> Result<Codebook> {
    if pairs.is_empty() {
        return Err(Error::Empty("angle set"));
    }
    let entries = pairs
        .par_iter()
        .map(|&(aoa, aod)| generate_entry(desc, aoa, aod))
        .collect::<Result<Vec<_>>>()?;
    Codebook::from_entries(desc.clone(), entries)
}

impl Codebook {
    /// Assembles a codebook, rejecting duplicate keys and foreign shapes.
    pub fn from_entries(descriptor: ArrayDescriptor, entries: Vec<CodebookEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            e.phase.check_matches(&descriptor.array)?;
            if index.insert(e.key(), i).is_some() {
                return Err(Error::DuplicateKey { index: i });
            }
        }
        Ok(Self {
            descriptor,
            entries,
            index,
        })
    }

    pub fn descriptor(&self) -> &ArrayDescriptor {
        &self.descriptor
    }

    pub fn entries(&self) -> &[CodebookEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the exact key, or the nearest entry by
    /// `sqrt(dtheta_i^2 + dphi_i^2 + dtheta_d^2 + dphi_d^2)` with azimuth
    /// differences taken around the circle. Ties go to the lower index.
    pub fn lookup_index(&self, aoa: Direction, aod: Direction) -> Option<usize> {
        if let Some(&i) = self.index.get(&key_of(aoa, aod)) {
            return Some(i);
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d = angular_distance((e.aoa, e.aod), (aoa, aod));
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn lookup(&self, aoa: Direction, aod: Direction) -> Option<&CodebookEntry> {
        self.lookup_index(aoa, aod).map(|i| &self.entries[i])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| FormatError::Io(e).into())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(FormatError::Io)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (descriptor, raw) = format::decode(bytes)?;
        let mut entries = Vec::with_capacity(raw.len());
        for (i, (aoa, aod, phase)) in raw.into_iter().enumerate() {
            let src = descriptor
                .source(aoa)
                .map_err(|e| FormatError::Inconsistent(format!("entry {i}: {e}")))?;
            let initial_poi =
                field_at_poi(&descriptor.array, &phase, &src, &descriptor.config, aod)?.magnitude;
            entries.push(CodebookEntry {
                aoa,
                aod,
                phase,
                initial_poi,
            });
        }
        Self::from_entries(descriptor, entries).map_err(|e| match e {
            Error::DuplicateKey { index } => {
                FormatError::Inconsistent(format!("duplicate key at entry {index}")).into()
            }
            other => other,
        })
    }

    /// The coherence bound at `entry.aod`, for checking entries.
    pub fn bound_for(&self, entry: &CodebookEntry) -> Result<f64> {
        let src = self.descriptor.source(entry.aoa)?;
        Ok(coherence_bound(
            &self.descriptor.array,
            &src,
            &self.descriptor.config,
            entry.aod.theta,
        ))
    }
}

fn azimuth_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

pub fn angular_distance(a: (Direction, Direction), b: (Direction, Direction)) -> f64 {
    let dti = a.0.theta - b.0.theta;
    let dpi = azimuth_gap(a.0.phi, b.0.phi);
    let dtd = a.1.theta - b.1.theta;
    let dpd = azimuth_gap(a.1.phi, b.1.phi);
    (dti * dti + dpi * dpi + dtd * dtd + dpd * dpd).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::farfield::scattered_field;
    use crate::grid::AngularGrid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn desc(n: usize) -> ArrayDescriptor {
        let f = 1e12;
        let lam = wavelength_from_frequency(f);
        let array = RisArray::planar(n, n, lam / 5.0, lam / 5.0).unwrap();
        ArrayDescriptor::new(array, FarFieldConfig::default(), f).unwrap()
    }

    fn deg(t: f64, p: f64) -> Direction {
        Direction::from_degrees(t, p)
    }

    #[test]
    fn broadside_pair_is_flat() {
        let e = generate_entry(&desc(4), Direction::BROADSIDE, Direction::BROADSIDE).unwrap();
        assert!(e.phase.as_slice().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn entries_reach_the_bound() {
        let d = desc(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let aoa = deg(rng.random_range(0.0..80.0), rng.random_range(0.0..360.0));
            let aod = deg(rng.random_range(0.0..80.0), rng.random_range(0.0..360.0));
            let cb = build_codebook(&d, &[(aoa, aod)]).unwrap();
            let e = &cb.entries()[0];
            let bound = cb.bound_for(e).unwrap();
            assert!((e.initial_poi - bound).abs() <= 1e-9 * bound);
        }
    }

    #[test]
    fn peak_decays_with_departure_elevation() {
        let d = desc(6);
        let pairs: Vec<_> = (0..9).map(|i| (deg(10.0, 20.0), deg(i as f64 * 10.0, 40.0))).collect();
        let cb = build_codebook(&d, &pairs).unwrap();
        for e in cb.entries() {
            let expected = 36.0 * e.aod.theta.cos().powi(2);
            assert!((e.initial_poi - expected).abs() <= 1e-9 * 36.0);
        }
    }

    #[test]
    fn grid_argmax_near_aod() {
        // The steering acts on the array factor; the cos^(2 rho) taper alone
        // would pull the discrete peak toward broadside on small apertures.
        let mut d = desc(8);
        d.config.rho = 0.0;
        let grid = Arc::new(AngularGrid::one_degree());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..6 {
            let aoa = deg(rng.random_range(0.0..60.0), rng.random_range(0.0..360.0));
            let aod = deg(rng.random_range(0.0..80.0), rng.random_range(0.0..360.0));
            let e = generate_entry(&d, aoa, aod).unwrap();
            let src = d.source(aoa).unwrap();
            let map = scattered_field(&d.array, &e.phase, &src, &grid, &d.config).unwrap();
            let (i, j) = map.argmax();
            let (t, p) = grid.direction(i, j);
            let sep = Direction::new(t, p).separation(aod);
            assert!(sep <= grid.resolution() * 2f64.sqrt() + 1e-12, "{aod:?} -> {sep}");
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let d = desc(2);
        let p = (deg(10.0, 20.0), deg(30.0, 40.0));
        assert!(matches!(build_codebook(&d, &[p, p]), Err(Error::DuplicateKey { index: 1 })));
        assert!(matches!(build_codebook(&d, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn exact_and_tie_lookup() {
        let d = desc(2);
        let a = deg(10.0, 10.0);
        // entries 0 and 1 sit symmetrically around the query in aod theta
        let pairs = [(a, deg(20.0, 50.0)), (a, deg(40.0, 50.0)), (a, deg(70.0, 50.0))];
        let cb = build_codebook(&d, &pairs).unwrap();
        assert_eq!(cb.lookup_index(a, deg(40.0, 50.0)), Some(1));
        assert_eq!(cb.lookup_index(a, deg(30.0, 50.0)), Some(0));
    }

    #[test]
    fn azimuth_wraps_for_lookup() {
        let d = desc(2);
        let a = deg(10.0, 10.0);
        let cb = build_codebook(&d, &[(a, deg(20.0, 180.0)), (a, deg(20.0, 1.0))]).unwrap();
        assert_eq!(cb.lookup_index(a, deg(20.0, 359.0)), Some(1));
    }

    #[test]
    fn round_trip_through_file() {
        let d = desc(3);
        let pairs = [(deg(5.0, 10.0), deg(30.0, 75.0)), (deg(5.0, 10.0), deg(15.0, 165.0))];
        let cb = build_codebook(&d, &pairs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("book.rfcb");
        cb.save(&path).unwrap();
        let back = Codebook::load(&path).unwrap();
        assert_eq!(back, cb);
        assert_eq!(back.to_bytes(), cb.to_bytes());
    }

    fn sorted_oracle(cb: &Codebook, aoa: Direction, aod: Direction) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, e) in cb.entries().iter().enumerate() {
            let d = angular_distance((e.aoa, e.aod), (aoa, aod));
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn lookup_matches_linear_scan(seed in any::<u64>(), n in 1usize..30) {
            let d = desc(2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pick = |rng: &mut ChaCha8Rng| deg(rng.random_range(0..80) as f64, rng.random_range(0..360) as f64);
            let mut pairs = Vec::new();
            while pairs.len() < n {
                let p = (pick(&mut rng), pick(&mut rng));
                if !pairs.contains(&p) {
                    pairs.push(p);
                }
            }
            let cb = build_codebook(&d, &pairs).unwrap();
            for _ in 0..10 {
                let (a, b) = (pick(&mut rng), pick(&mut rng));
                prop_assert_eq!(cb.lookup_index(a, b), Some(sorted_oracle(&cb, a, b)));
            }
        }
    }
}
