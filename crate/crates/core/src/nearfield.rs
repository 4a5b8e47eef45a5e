//! Near-field (Fresnel-Kirchhoff) scattering from wall-mounted panels.
//!
//! A point source illuminates every element with a spherical wave
//! `E_inc,n = E0 / d_n * exp(j k d_n)`. Each element re-radiates with unit
//! reflection magnitude and phase `Phi_n`, so the scattered field at `p` is
//! `sum_n E_inc,n exp(j Phi_n) exp(j k R_n(p)) / R_n(p)`. The direct
//! source-to-point path is not part of the scattered field.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as c64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{PointSource, RisArray, Vec3};
use crate::grid::DualVolumeGrid;
use crate::phase::PhaseProfile;

const COINCIDENT: f64 = 1e-12;

/// A cubic domain with reflecting panels and one point source.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    side: f64,
    panels: Vec<RisArray>,
    source: PointSource,
    elements: Vec<Vec3>,
}

impl Scene {
    pub fn new(side: f64, panels: Vec<RisArray>, source: PointSource) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(invalid("side", format!("{side} must be positive")));
        }
        if panels.is_empty() {
            return Err(Error::Empty("panel list"));
        }
        if source.position().iter().any(|&c| !(0.0..=side).contains(&c)) {
            return Err(invalid("source", "position outside the domain"));
        }
        let elements = panels.iter().flat_map(|p| p.element_positions()).collect();
        Ok(Self {
            side,
            panels,
            source,
            elements,
        })
    }

    /// Four `rows x cols` panels covering the vertical walls of `[0, L]^3`,
    /// inset by `margin * L` from every wall edge. Panels are ordered
    /// `y = 0`, `x = L`, `y = L`, `x = 0`; all normals point into the room.
    pub fn enclosed(
        side: f64,
        rows: usize,
        cols: usize,
        margin: f64,
        source: PointSource,
    ) -> Result<Self> {
        if !(0.0..0.5).contains(&margin) {
            return Err(invalid("margin", format!("{margin} outside [0, 0.5)")));
        }
        let extent = side * (1.0 - 2.0 * margin);
        let spacing = |n: usize| if n > 1 { extent / (n - 1) as f64 } else { extent.max(f64::MIN_POSITIVE) };
        let (du, dv) = (spacing(cols), spacing(rows));
        let h = side / 2.0;
        let z = Vec3::z();
        let walls = [
            (Vec3::new(h, 0.0, h), -Vec3::x()),
            (Vec3::new(side, h, h), -Vec3::y()),
            (Vec3::new(h, side, h), Vec3::x()),
            (Vec3::new(0.0, h, h), Vec3::y()),
        ];
        let panels = walls
            .iter()
            .map(|&(origin, u)| RisArray::new(rows, cols, du, dv, origin, u, z))
            .collect::<Result<Vec<_>>>()?;
        Self::new(side, panels, source)
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn panels(&self) -> &[RisArray] {
        &self.panels
    }

    pub fn source(&self) -> &PointSource {
        &self.source
    }

    pub fn wavenumber(&self) -> f64 {
        self.source.wavenumber()
    }

    /// All element positions, panel-major then row-major.
    pub fn elements(&self) -> &[Vec3] {
        &self.elements
    }

    /// Total scatterer count across panels.
    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Replace the source, keeping the panels.
    pub fn with_source(&self, source: PointSource) -> Result<Self> {
        Self::new(self.side, self.panels.clone(), source)
    }

    /// All elements at phase `pi`: the bare-conductor starting point.
    pub fn pec_baseline(&self) -> Vec<PhaseProfile> {
        self.panels
            .iter()
            .map(|p| PhaseProfile::uniform(p.rows(), p.cols(), PI))
            .collect()
    }

    /// Concatenate per-panel phases into one element-ordered vector.
    pub fn flatten_phases(&self, phases: &[PhaseProfile]) -> Result<Vec<f64>> {
        if phases.len() != self.panels.len() {
            return Err(Error::DimensionMismatch {
                what: "phase profiles per panel",
                expected: self.panels.len().to_string(),
                actual: phases.len().to_string(),
            });
        }
        let mut out = Vec::with_capacity(self.element_count());
        for (panel, phase) in self.panels.iter().zip(phases) {
            phase.check_matches(panel)?;
            out.extend_from_slice(phase.as_slice());
        }
        Ok(out)
    }

    /// Split an element-ordered phase vector back into per-panel profiles.
    pub fn split_phases(&self, flat: &[f64]) -> Result<Vec<PhaseProfile>> {
        if flat.len() != self.element_count() {
            return Err(Error::DimensionMismatch {
                what: "flat phase vector",
                expected: self.element_count().to_string(),
                actual: flat.len().to_string(),
            });
        }
        let mut offset = 0;
        self.panels
            .iter()
            .map(|p| {
                let n = p.len();
                let prof = PhaseProfile::from_vec(p.rows(), p.cols(), flat[offset..offset + n].to_vec());
                offset += n;
                prof
            })
            .collect()
    }
}

/// Incident field on every element.
pub fn illuminate(scene: &Scene) -> Result<Vec<c64>> {
    let src = scene.source();
    let k = src.wavenumber();
    scene
        .elements()
        .iter()
        .enumerate()
        .map(|(n, e)| {
            let d = (e - src.position()).norm();
            if d <= COINCIDENT {
                return Err(Error::DegenerateGeometry {
                    what: "source coincides with element",
                    element: n,
                    point: 0,
                });
            }
            Ok(c64::from_polar(src.amplitude() / d, k * d))
        })
        .collect()
}

/// Whether a field evaluation includes the direct source path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldMode {
    #[default]
    Scattered,
    /// Scattered plus line-of-sight field. Visualisation only.
    Total,
}

/// Re-radiating weights `E_inc,n exp(j Phi_n)`.
pub fn element_weights(incident: &[c64], phases: &[f64]) -> Vec<c64> {
    incident
        .iter()
        .zip(phases)
        .map(|(e, &p)| e * c64::cis(p))
        .collect()
}

/// `exp(j k R) / R`, or the offending index pair when `R` vanishes.
#[inline]
pub(crate) fn green(k: f64, from: &Vec3, to: &Vec3) -> Option<c64> {
    let r = (to - from).norm();
    (r > COINCIDENT).then(|| c64::from_polar(1.0 / r, k * r))
}

/// Field at arbitrary points from weighted elements. Points are evaluated in
/// parallel; each point sums elements in order.
pub fn field_at_points(
    scene: &Scene,
    weights: &[c64],
    points: &[Vec3],
    mode: FieldMode,
) -> Result<Vec<c64>> {
    let k = scene.wavenumber();
    let src = scene.source();
    let elements = scene.elements();
    if weights.len() != elements.len() {
        return Err(Error::DimensionMismatch {
            what: "element weights",
            expected: elements.len().to_string(),
            actual: weights.len().to_string(),
        });
    }
    points
        .par_iter()
        .enumerate()
        .map(|(pi, p)| {
            let mut acc = c64::new(0.0, 0.0);
            for (n, (e, w)) in elements.iter().zip(weights).enumerate() {
                let g = green(k, e, p).ok_or(Error::DegenerateGeometry {
                    what: "grid point coincides with element",
                    element: n,
                    point: pi,
                })?;
                acc += w * g;
            }
            if mode == FieldMode::Total {
                let g = green(k, &src.position(), p).ok_or(Error::DegenerateGeometry {
                    what: "grid point coincides with source",
                    element: usize::MAX,
                    point: pi,
                })?;
                acc += g * src.amplitude();
            }
            Ok(acc)
        })
        .collect()
}

/// Scattered field on both levels of a [`DualVolumeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFieldMap {
    grid: Arc<DualVolumeGrid>,
    coarse: Vec<c64>,
    fine: Vec<c64>,
}

impl VolumeFieldMap {
    pub fn new(grid: Arc<DualVolumeGrid>, coarse: Vec<c64>, fine: Vec<c64>) -> Result<Self> {
        if coarse.len() != grid.coarse_points().len() || fine.len() != grid.fine_points().len() {
            return Err(Error::DimensionMismatch {
                what: "volume field map",
                expected: format!("{}+{}", grid.coarse_points().len(), grid.fine_points().len()),
                actual: format!("{}+{}", coarse.len(), fine.len()),
            });
        }
        if coarse.iter().chain(&fine).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid("volume field", "non-finite value"));
        }
        Ok(Self { grid, coarse, fine })
    }

    pub fn grid(&self) -> &Arc<DualVolumeGrid> {
        &self.grid
    }

    pub fn coarse(&self) -> &[c64] {
        &self.coarse
    }

    pub fn fine(&self) -> &[c64] {
        &self.fine
    }

    /// Mean magnitude over coarse (outside-zone) points.
    pub fn outside_mean_magnitude(&self) -> f64 {
        mean_magnitude(&self.coarse)
    }
}

/// Scattered field of the scene on the dual grid for the given per-panel phases.
pub fn scatter_to_grid(
    scene: &Scene,
    phases: &[PhaseProfile],
    incident: &[c64],
    grid: &Arc<DualVolumeGrid>,
) -> Result<VolumeFieldMap> {
    let flat = scene.flatten_phases(phases)?;
    if incident.len() != flat.len() {
        return Err(Error::DimensionMismatch {
            what: "incident field",
            expected: flat.len().to_string(),
            actual: incident.len().to_string(),
        });
    }
    let weights = element_weights(incident, &flat);
    let coarse = field_at_points(scene, &weights, grid.coarse_points(), FieldMode::Scattered)?;
    let fine = field_at_points(scene, &weights, grid.fine_points(), FieldMode::Scattered)?;
    VolumeFieldMap::new(grid.clone(), coarse, fine)
}

/// Quiet-zone statistics over the fine grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuietZoneMetrics {
    /// Mean of `|E|^2` over zone points (V^2/m^2).
    pub avg_power: f64,
    /// Mean of `|E|` over zone points (V/m).
    pub avg_magnitude: f64,
    /// `20 log10(avg_magnitude / reference avg_magnitude)` when a reference
    /// was supplied.
    pub suppression_db: Option<f64>,
}

pub fn mean_magnitude(values: &[c64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| v.norm()).sum::<f64>() / values.len() as f64
}

pub fn mean_power(values: &[c64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| v.norm_sqr()).sum::<f64>() / values.len() as f64
}

/// `20 log10(value / reference)` for magnitudes.
pub fn magnitude_db(value: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(20.0 * (value / reference).log10())
}

pub fn quiet_zone_metrics(
    map: &VolumeFieldMap,
    reference: Option<&VolumeFieldMap>,
) -> Result<QuietZoneMetrics> {
    if map.fine.is_empty() {
        return Err(Error::Empty("quiet-zone fine grid"));
    }
    let avg_magnitude = mean_magnitude(&map.fine);
    let suppression_db = match reference {
        Some(r) => {
            if !(Arc::ptr_eq(&r.grid, &map.grid) || r.grid == map.grid) {
                return Err(invalid("reference", "maps are on different grids"));
            }
            Some(magnitude_db(avg_magnitude, mean_magnitude(&r.fine))?)
        }
        None => None,
    };
    Ok(QuietZoneMetrics {
        avg_power: mean_power(&map.fine),
        avg_magnitude,
        suppression_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Refinement;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    fn one_element_scene(pos: Vec3, src: Vec3) -> Scene {
        let panel = RisArray::new(1, 1, 0.1, 0.1, pos, Vec3::x(), Vec3::z()).unwrap();
        Scene::new(10.0, vec![panel], PointSource::new(1.0, 1e9, src).unwrap()).unwrap()
    }

    #[test]
    fn unit_distance_has_source_magnitude() {
        let s = one_element_scene(Vec3::new(1.0, 0.0, 1.0), Vec3::new(1.0, 1.0, 1.0));
        let inc = illuminate(&s).unwrap();
        assert_relative_eq!(inc[0].norm(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn two_metre_path() {
        let s = one_element_scene(Vec3::new(1.0, 0.0, 1.0), Vec3::new(1.0, 2.0, 1.0));
        let inc = illuminate(&s).unwrap();
        let k = s.wavenumber();
        assert_relative_eq!(inc[0].norm(), 0.5, max_relative = 1e-15);
        let expected = (k * 2.0).rem_euclid(TAU);
        let got = inc[0].arg().rem_euclid(TAU);
        let d = (expected - got).abs();
        assert!(d.min(TAU - d) < 1e-9);
    }

    #[test]
    fn coincident_source_is_rejected() {
        let p = Vec3::new(1.0, 0.0, 1.0);
        let s = one_element_scene(p, p);
        assert!(matches!(illuminate(&s), Err(Error::DegenerateGeometry { element: 0, .. })));
    }

    #[test]
    fn enclosed_panels_lie_on_walls() {
        let src = PointSource::new(1.0, 28e9, Vec3::new(3.0, 1.0, 1.0)).unwrap();
        let s = Scene::enclosed(4.0, 16, 16, 0.1, src).unwrap();
        assert_eq!(s.element_count(), 4 * 256);
        let walls: [(usize, f64); 4] = [(1, 0.0), (0, 4.0), (1, 4.0), (0, 0.0)];
        for (panel, &(axis, value)) in s.panels().iter().zip(walls.iter()) {
            for p in panel.element_positions() {
                assert!((p[axis] - value).abs() < 1e-9);
                assert!(p.z >= 0.4 - 1e-12 && p.z <= 3.6 + 1e-12);
            }
            // normals point into the room
            let inward = Vec3::new(2.0, 2.0, 2.0) - panel.origin();
            assert!(panel.normal().dot(&inward) > 0.0);
        }
    }

    #[test]
    fn single_term_closed_form() {
        let e = Vec3::new(1.0, 0.0, 1.0);
        let s = one_element_scene(e, Vec3::new(1.0, 2.0, 1.0));
        let inc = illuminate(&s).unwrap();
        let p = Vec3::new(2.0, 3.0, 0.5);
        let phase = 0.8;
        let f = field_at_points(&s, &element_weights(&inc, &[phase]), &[p], FieldMode::Scattered).unwrap();
        let k = s.wavenumber();
        let d = 2.0;
        let r = (p - e).norm();
        let expected = c64::from_polar(1.0 / d, k * d) * c64::cis(phase) * c64::from_polar(1.0 / r, k * r);
        assert!((f[0] - expected).norm() < 1e-15);
    }

    #[test]
    fn reciprocal_distance_decay() {
        let e = Vec3::new(5.0, 0.0, 5.0);
        let s = one_element_scene(e, Vec3::new(5.0, 3.0, 5.0));
        let inc = illuminate(&s).unwrap();
        let w = element_weights(&inc, &[0.3]);
        let dir = Vec3::new(0.3, 0.8, 0.1).normalize();
        let f = field_at_points(&s, &w, &[e + dir * 1.5, e + dir * 3.0], FieldMode::Scattered).unwrap();
        assert_relative_eq!(f[1].norm() * 2.0, f[0].norm(), max_relative = 1e-13);
    }

    #[test]
    fn antipodal_pair_cancels() {
        // two elements equidistant from the observation point
        let a = RisArray::new(1, 2, 1.0, 1.0, Vec3::new(5.0, 0.0, 5.0), Vec3::x(), Vec3::z()).unwrap();
        let src = PointSource::new(1.0, 1e9, Vec3::new(5.0, 4.0, 5.0)).unwrap();
        let s = Scene::new(10.0, vec![a], src).unwrap();
        let inc = illuminate(&s).unwrap();
        let p = Vec3::new(5.0, 2.0, 5.0);
        let k = s.wavenumber();
        // choose phases so both contributions are real positive / negative
        let g0 = green(k, &s.elements()[0], &p).unwrap();
        let g1 = green(k, &s.elements()[1], &p).unwrap();
        let p0 = -(inc[0] * g0).arg();
        let p1 = PI - (inc[1] * g1).arg();
        let f = field_at_points(&s, &element_weights(&inc, &[p0, p1]), &[p], FieldMode::Scattered).unwrap();
        let scale = (inc[0] * g0).norm() + (inc[1] * g1).norm();
        assert!(f[0].norm() < 1e-9 * scale);
    }

    #[test]
    fn coincident_point_names_pair() {
        let e = Vec3::new(1.0, 0.0, 1.0);
        let s = one_element_scene(e, Vec3::new(1.0, 2.0, 1.0));
        let err = field_at_points(&s, &[c64::new(1.0, 0.0)], &[Vec3::new(0.0, 0.0, 0.0), e], FieldMode::Scattered)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { element: 0, point: 1, .. }));
    }

    fn desk_scene() -> (Scene, Arc<DualVolumeGrid>) {
        let src = PointSource::new(1.0, 28e9, Vec3::new(3.0, 1.0, 1.0)).unwrap();
        let scene = Scene::enclosed(4.0, 4, 4, 0.1, src).unwrap();
        let grid = DualVolumeGrid::build(4.0, [9, 9, 9], Vec3::new(2.0, 2.0, 2.0), 0.5, Refinement::Factor(2.0)).unwrap();
        (scene, Arc::new(grid))
    }

    #[test]
    fn global_phase_shift_rotates_field() {
        let (scene, grid) = desk_scene();
        let inc = illuminate(&scene).unwrap();
        let base = scene.pec_baseline();
        let shifted: Vec<_> = base.iter().map(|p| p.shifted(1.1)).collect();
        let a = scatter_to_grid(&scene, &base, &inc, &grid).unwrap();
        let b = scatter_to_grid(&scene, &shifted, &inc, &grid).unwrap();
        let rot = c64::cis(1.1);
        for (x, y) in a.fine().iter().zip(b.fine()) {
            assert!((x * rot - y).norm() <= 1e-12 * x.norm().max(1e-12));
        }
        let m = quiet_zone_metrics(&b, Some(&a)).unwrap();
        assert!(m.suppression_db.unwrap().abs() < 1e-9);
    }

    #[test]
    fn superposition_over_partition() {
        let (scene, grid) = desk_scene();
        let inc = illuminate(&scene).unwrap();
        let phases: Vec<f64> = (0..scene.element_count()).map(|n| (n as f64 * 0.37).rem_euclid(TAU)).collect();
        let w = element_weights(&inc, &phases);
        let full = field_at_points(&scene, &w, grid.fine_points(), FieldMode::Scattered).unwrap();
        let half = scene.element_count() / 3;
        let mut wa = w.clone();
        let mut wb = w.clone();
        wa[half..].iter_mut().for_each(|v| *v = c64::new(0.0, 0.0));
        wb[..half].iter_mut().for_each(|v| *v = c64::new(0.0, 0.0));
        let fa = field_at_points(&scene, &wa, grid.fine_points(), FieldMode::Scattered).unwrap();
        let fb = field_at_points(&scene, &wb, grid.fine_points(), FieldMode::Scattered).unwrap();
        for ((f, a), b) in full.iter().zip(&fa).zip(&fb) {
            assert!((f - (a + b)).norm() <= 1e-12 * f.norm().max(a.norm() + b.norm()));
        }
    }

    #[test]
    fn constant_field_statistics() {
        let grid = Arc::new(
            DualVolumeGrid::build(4.0, [5, 5, 5], Vec3::new(2.0, 2.0, 2.0), 0.5, Refinement::Factor(4.0)).unwrap(),
        );
        let a = 0.7;
        let fine: Vec<c64> = (0..grid.fine_points().len()).map(|i| c64::from_polar(a, i as f64)).collect();
        let coarse = vec![c64::new(0.0, 0.0); grid.coarse_points().len()];
        let map = VolumeFieldMap::new(grid, coarse, fine).unwrap();
        let m = quiet_zone_metrics(&map, Some(&map)).unwrap();
        assert_relative_eq!(m.avg_power, a * a, max_relative = 1e-14);
        assert_relative_eq!(m.avg_magnitude, a, max_relative = 1e-14);
        assert_eq!(m.suppression_db, Some(0.0));
    }

    #[test]
    fn indoor_incident_matches_distance_oracle() {
        let src = PointSource::new(1.0, 28e9, Vec3::new(9.0, 9.0, 0.0)).unwrap();
        let scene = Scene::enclosed(10.0, 10, 10, 0.1, src).unwrap();
        let inc = illuminate(&scene).unwrap();
        for (e, v) in scene.elements().iter().zip(&inc) {
            let d = ((e.x - 9.0).powi(2) + (e.y - 9.0).powi(2) + e.z.powi(2)).sqrt();
            assert!((v.norm() - 1.0 / d).abs() <= 1e-12 / d);
        }
    }
}
