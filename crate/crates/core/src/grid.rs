//! Sampling grids: the angular `(theta, phi)` grid used by the far-field
//! engine and the two-level volume grid used for quiet zones.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as c64;

use crate::error::{invalid, Error, Result};
use crate::geometry::Vec3;

const SPACING_TOL: f64 = 1e-12;

/// Sphere membership slack: lattice points on the boundary must count as
/// inside regardless of rounding in their coordinates.
const ZONE_RTOL: f64 = 1.0 + 1e-9;

/// Default angular resolution: one degree.
pub const DEFAULT_RESOLUTION: f64 = std::f64::consts::PI / 180.0;

/// Uniform elevation/azimuth sampling of the upper half-space.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    theta: Vec<f64>,
    phi: Vec<f64>,
    resolution: f64,
}

impl AngularGrid {
    /// `theta = 0, res, ..., pi/2` and `phi = 0, res, ..., < 2 pi`.
    ///
    /// `res` must divide `pi / 2` evenly (to 1e-9 relative).
    pub fn with_resolution(res: f64) -> Result<Self> {
        if !(res > 0.0 && res <= FRAC_PI_2) {
            return Err(invalid("resolution", format!("{res} rad outside (0, pi/2]")));
        }
        let steps = FRAC_PI_2 / res;
        let n_theta = steps.round();
        if (steps - n_theta).abs() > 1e-9 * steps {
            return Err(invalid(
                "resolution",
                format!("{res} rad does not divide pi/2 evenly"),
            ));
        }
        let n_theta = n_theta as usize + 1;
        let n_phi = (TAU / res).round() as usize;
        let theta = (0..n_theta).map(|i| i as f64 * res).collect();
        let phi = (0..n_phi).map(|j| j as f64 * res).collect();
        Ok(Self {
            theta,
            phi,
            resolution: res,
        })
    }

    pub fn one_degree() -> Self {
        Self::with_resolution(DEFAULT_RESOLUTION).expect("1 degree divides 90 degrees")
    }

    /// Arbitrary uniform samples. Both axes must share one spacing.
    pub fn new(theta: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || phi.is_empty() {
            return Err(Error::Empty("angular grid"));
        }
        let res = uniform_step(&theta)
            .or_else(|| uniform_step(&phi))
            .unwrap_or(DEFAULT_RESOLUTION);
        for (name, axis) in [("theta", &theta), ("phi", &phi)] {
            if let Some(step) = uniform_step(axis) {
                if (step - res).abs() > SPACING_TOL {
                    return Err(invalid("angular grid", format!("{name} spacing {step} != {res}")));
                }
            }
            for w in axis.windows(2) {
                if ((w[1] - w[0]) - res).abs() > SPACING_TOL {
                    return Err(invalid("angular grid", format!("{name} samples not uniform")));
                }
            }
        }
        if theta[0] < 0.0 || *theta.last().unwrap() > FRAC_PI_2 + SPACING_TOL {
            return Err(invalid("angular grid", "theta outside [0, pi/2]"));
        }
        if phi[0] < 0.0 || *phi.last().unwrap() >= TAU {
            return Err(invalid("angular grid", "phi outside [0, 2pi)"));
        }
        Ok(Self {
            theta,
            phi,
            resolution: res,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.theta.len(), self.phi.len())
    }

    pub fn len(&self) -> usize {
        self.theta.len() * self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn direction(&self, i: usize, j: usize) -> (f64, f64) {
        (self.theta[i], self.phi[j])
    }

    /// Whether the azimuth axis covers the full circle, so that the first and
    /// last columns are neighbours.
    pub fn wraps_azimuth(&self) -> bool {
        let n = self.phi.len() as f64;
        (n * self.resolution - TAU).abs() < 1e-9
    }

    /// Nearest grid cell to a direction, wrapping azimuth when the grid does.
    pub fn nearest_cell(&self, theta: f64, phi: f64) -> (usize, usize) {
        let nearest = |axis: &[f64], x: f64| {
            let idx = ((x - axis[0]) / self.resolution).round();
            idx.clamp(0.0, (axis.len() - 1) as f64) as usize
        };
        let i = nearest(&self.theta, theta);
        let j = if self.wraps_azimuth() {
            let idx = ((phi - self.phi[0]) / self.resolution).round() as i64;
            idx.rem_euclid(self.phi.len() as i64) as usize
        } else {
            nearest(&self.phi, phi)
        };
        (i, j)
    }

    /// Chebyshev distance in cells, wrapping azimuth when the grid does.
    pub fn cell_distance(&self, a: (usize, usize), b: (usize, usize)) -> usize {
        let di = a.0.abs_diff(b.0);
        let mut dj = a.1.abs_diff(b.1);
        if self.wraps_azimuth() {
            dj = dj.min(self.phi.len() - dj);
        }
        di.max(dj)
    }
}

fn uniform_step(axis: &[f64]) -> Option<f64> {
    (axis.len() >= 2).then(|| axis[1] - axis[0])
}

/// Complex field sampled on an [`AngularGrid`]; rows are elevation samples,
/// columns azimuth samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularFieldMap {
    grid: Arc<AngularGrid>,
    values: Array2<c64>,
}

impl AngularFieldMap {
    pub fn new(grid: Arc<AngularGrid>, values: Array2<c64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::DimensionMismatch {
                what: "angular field map",
                expected: format!("{:?}", grid.shape()),
                actual: format!("{:?}", values.dim()),
            });
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid("field map", "non-finite value"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<AngularGrid>) -> Self {
        let values = Array2::zeros(grid.shape());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<AngularGrid> {
        &self.grid
    }

    pub fn values(&self) -> &Array2<c64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<c64> {
        self.values
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm())
    }

    pub fn max_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// First cell (row-major) attaining the maximum magnitude.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_mag = f64::NEG_INFINITY;
        for ((i, j), v) in self.values.indexed_iter() {
            let m = v.norm();
            if m > best_mag {
                best_mag = m;
                best = (i, j);
            }
        }
        best
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|v| v.re == 0.0 && v.im == 0.0)
    }
}

/// How finely the quiet-zone sphere is sampled relative to the coarse grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Refinement {
    /// Fine spacing = coarse spacing / factor, factor >= 1.
    Factor(f64),
    /// Smallest factor >= 1 yielding at least this many fine points.
    TargetPoints(usize),
}

/// Coarse room lattice plus a finer lattice restricted to the quiet-zone
/// sphere.
///
/// The coarse lattice is node-centred on `[0, L]^3` (`N` nodes per axis,
/// spacing `L / (N - 1)`). Coarse points that feed statistics are the
/// interior nodes lying outside the sphere: boundary nodes sit on the
/// RIS-covered walls, where the scattered field is singular. The fine lattice
/// is anchored at the sphere centre and clipped to the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVolumeGrid {
    side: f64,
    counts: [usize; 3],
    coarse_spacing: [f64; 3],
    center: Vec3,
    radius: f64,
    fine_spacing: f64,
    refinement: f64,
    coarse: Vec<Vec3>,
    fine: Vec<Vec3>,
}

impl DualVolumeGrid {
    pub fn build(
        side: f64,
        counts: [usize; 3],
        center: Vec3,
        radius: f64,
        refinement: Refinement,
    ) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(invalid("side", format!("{side} must be positive")));
        }
        if counts.iter().any(|&n| n < 2) {
            return Err(invalid("counts", format!("{counts:?}: need >= 2 nodes per axis")));
        }
        if !(radius > 0.0) {
            return Err(invalid("r_qz", format!("{radius} must be positive")));
        }
        if radius >= side {
            return Err(invalid("r_qz", format!("{radius} >= domain side {side}")));
        }
        if center.iter().any(|&c| !(0.0..=side).contains(&c)) {
            return Err(invalid("qz_center", "centre outside [0, L]^3"));
        }
        let coarse_spacing = counts.map(|n| side / (n - 1) as f64);
        let coarse_min = coarse_spacing.iter().cloned().fold(f64::INFINITY, f64::min);

        let refinement = match refinement {
            Refinement::Factor(f) => {
                if !(f >= 1.0 && f.is_finite()) {
                    return Err(invalid("refinement", format!("{f} < 1")));
                }
                f
            }
            Refinement::TargetPoints(n) => {
                if n == 0 {
                    return Err(invalid("refinement", "target point count must be positive"));
                }
                solve_refinement(side, center, radius, coarse_min, n)
            }
        };
        let fine_spacing = coarse_min / refinement;
        let fine = sphere_lattice(side, center, radius, fine_spacing);

        let r2 = radius * radius * ZONE_RTOL;
        let mut coarse = Vec::new();
        for i in 1..counts[0] - 1 {
            for j in 1..counts[1] - 1 {
                for k in 1..counts[2] - 1 {
                    let p = Vec3::new(
                        i as f64 * coarse_spacing[0],
                        j as f64 * coarse_spacing[1],
                        k as f64 * coarse_spacing[2],
                    );
                    if (p - center).norm_squared() > r2 {
                        coarse.push(p);
                    }
                }
            }
        }
        Ok(Self {
            side,
            counts,
            coarse_spacing,
            center,
            radius,
            fine_spacing,
            refinement,
            coarse,
            fine,
        })
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn coarse_spacing(&self) -> [f64; 3] {
        self.coarse_spacing
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn fine_spacing(&self) -> f64 {
        self.fine_spacing
    }

    pub fn refinement(&self) -> f64 {
        self.refinement
    }

    /// Interior coarse nodes outside the sphere.
    pub fn coarse_points(&self) -> &[Vec3] {
        &self.coarse
    }

    /// Fine points inside the sphere and the domain.
    pub fn fine_points(&self) -> &[Vec3] {
        &self.fine
    }

    /// Whether `p` satisfies the quiet-zone sphere inequality.
    pub fn in_zone(&self, p: &Vec3) -> bool {
        (p - self.center).norm_squared() <= self.radius * self.radius * ZONE_RTOL
    }
}

fn sphere_lattice(side: f64, center: Vec3, radius: f64, h: f64) -> Vec<Vec3> {
    let n = (radius / h).floor() as i64 + 1;
    // compare in lattice units so boundary points (i^2+j^2+k^2 = (r/h)^2)
    // are not lost to the rounding of i*h
    let r2 = (radius / h).powi(2) * ZONE_RTOL;
    let slack = 1e-12 * side;
    let mut out = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            for k in -n..=n {
                if ((i * i + j * j + k * k) as f64) > r2 {
                    continue;
                }
                let off = Vec3::new(i as f64 * h, j as f64 * h, k as f64 * h);
                let p = center + off;
                if p.iter().all(|&c| c >= -slack && c <= side + slack) {
                    out.push(p.map(|c| c.clamp(0.0, side)));
                }
            }
        }
    }
    out
}

fn solve_refinement(side: f64, center: Vec3, radius: f64, coarse: f64, target: usize) -> f64 {
    let count = |f: f64| sphere_lattice(side, center, radius, coarse / f).len();
    if count(1.0) >= target {
        return 1.0;
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    while count(hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if count(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-9 * hi {
            break;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_degree_grid_shape() {
        let g = AngularGrid::one_degree();
        assert_eq!(g.shape(), (91, 360));
        assert!((g.theta()[90] - FRAC_PI_2).abs() < 1e-12);
        assert!(g.wraps_azimuth());
    }

    #[test]
    fn nearest_cell_wraps() {
        let g = AngularGrid::one_degree();
        let d = DEFAULT_RESOLUTION;
        assert_eq!(g.nearest_cell(30.2 * d, 359.7 * d), (30, 0));
        assert_eq!(g.cell_distance((10, 0), (11, 359)), 1);
    }

    #[test]
    fn rejects_non_uniform() {
        assert!(AngularGrid::new(vec![0.0, 0.1, 0.3], vec![0.0, 0.1]).is_err());
        assert!(AngularGrid::with_resolution(0.7).is_err());
    }

    #[test]
    fn refinement_one_reuses_coarse_nodes() {
        let g = DualVolumeGrid::build(
            10.0,
            [11, 11, 11],
            Vec3::new(5.0, 5.0, 5.0),
            0.5,
            Refinement::Factor(1.0),
        )
        .unwrap();
        assert_eq!(g.fine_points(), &[Vec3::new(5.0, 5.0, 5.0)]);
        assert_eq!(g.coarse_points().len(), 9 * 9 * 9 - 1);
    }

    #[test]
    fn clipped_sphere_keeps_upper_half() {
        let g = DualVolumeGrid::build(
            10.0,
            [51, 51, 51],
            Vec3::new(5.0, 5.0, 0.0),
            0.5,
            Refinement::Factor(2.0),
        )
        .unwrap();
        assert!(!g.fine_points().is_empty());
        assert!(g.fine_points().iter().all(|p| p.z >= 0.0 && g.in_zone(p)));
        assert!(g.fine_points().iter().any(|p| p.z == 0.0));
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let c = Vec3::new(1.0, 1.0, 1.0);
        assert!(DualVolumeGrid::build(2.0, [5, 5, 5], c, 2.0, Refinement::Factor(1.0)).is_err());
        assert!(DualVolumeGrid::build(2.0, [5, 5, 5], c, 0.5, Refinement::Factor(0.5)).is_err());
        assert!(DualVolumeGrid::build(2.0, [5, 5, 5], c, 0.0, Refinement::Factor(1.0)).is_err());
    }

    #[test]
    fn target_point_count_is_met() {
        let g = DualVolumeGrid::build(
            4.0,
            [41, 41, 41],
            Vec3::new(2.0, 2.0, 2.0),
            0.5,
            Refinement::TargetPoints(2000),
        )
        .unwrap();
        assert!(g.fine_points().len() >= 2000);
        assert!(g.fine_spacing() <= 0.1);
        // a slightly coarser lattice would fall short
        let coarser = sphere_lattice(4.0, g.center(), 0.5, g.fine_spacing() * 1.01);
        assert!(coarser.len() < 2000 || g.refinement() == 1.0);
    }
}
