//! Far-field Huygens-Fresnel response of a planar panel.
//!
//! Every element re-radiates the incident plane wave with its control phase.
//! The field toward `(theta, phi)` is
//!
//! ```text
//! E(theta, phi) = E0 cos^(2 rho)(theta) * sum_n exp(j (Phi_n + psi_inc_n + psi_out_n(theta, phi)))
//! ```
//!
//! where `psi_inc_n = k (x_n cos phi_i + y_n sin phi_i) sin theta_i` and
//! `psi_out_n` is the same expression at the observation direction. Because the
//! lattice is separable the sum factorises into a row sum of column sums,
//! which needs only `rows + cols` complex exponentials per direction.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as c64;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::{PlaneWaveSource, RisArray};
use crate::grid::{AngularFieldMap, AngularGrid};
use crate::phase::{wrap_phase, PhaseProfile};

/// Element pattern and normalisation of the far-field response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarFieldConfig {
    /// Exponent of the `cos^(2 rho)` element pattern; 0 is isotropic.
    pub rho: f64,
    /// Normalisation `E0` (V/m). Multiplies the source amplitude, which is
    /// taken relative to a unit plane wave.
    pub e0: f64,
}

impl Default for FarFieldConfig {
    fn default() -> Self {
        Self { rho: 1.0, e0: 1.0 }
    }
}

impl FarFieldConfig {
    pub fn new(rho: f64, e0: f64) -> Result<Self> {
        let cfg = Self { rho, e0 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(invalid("rho", format!("{} must be >= 0", self.rho)));
        }
        if !(self.e0 > 0.0 && self.e0.is_finite()) {
            return Err(invalid("e0", format!("{} must be positive", self.e0)));
        }
        Ok(())
    }

    /// `cos^(2 rho)(theta)`, clamped at zero past the horizon.
    #[inline]
    pub fn element_gain(&self, theta: f64) -> f64 {
        theta.cos().max(0.0).powf(2.0 * self.rho)
    }
}

/// An elevation/azimuth pair in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    pub const BROADSIDE: Direction = Direction {
        theta: 0.0,
        phi: 0.0,
    };

    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi }
    }

    pub fn from_degrees(theta: f64, phi: f64) -> Self {
        Self::new(theta.to_radians(), phi.to_radians())
    }

    pub fn to_degrees(self) -> (f64, f64) {
        (self.theta.to_degrees(), self.phi.to_degrees())
    }

    /// Direction cosines `(sin theta cos phi, sin theta sin phi)`.
    #[inline]
    pub fn uv(self) -> (f64, f64) {
        let s = self.theta.sin();
        (s * self.phi.cos(), s * self.phi.sin())
    }

    /// Great-circle angle to another direction.
    pub fn separation(self, other: Direction) -> f64 {
        let unit = |d: Direction| {
            let (u, v) = d.uv();
            [u, v, d.theta.cos()]
        };
        let (a, b) = (unit(self), unit(other));
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = cross.iter().map(|c| c * c).sum::<f64>().sqrt();
        sin.atan2(dot)
    }

    pub fn validate(self) -> Result<()> {
        if !(0.0..=FRAC_PI_2).contains(&self.theta) {
            return Err(invalid("theta", format!("{} rad outside [0, pi/2]", self.theta)));
        }
        if !(0.0..std::f64::consts::TAU).contains(&self.phi) {
            return Err(invalid("phi", format!("{} rad outside [0, 2pi)", self.phi)));
        }
        Ok(())
    }
}

/// Magnitude of the field at one exact direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoiSample {
    pub direction: Direction,
    pub magnitude: f64,
}

/// Per-element phase `k [x_n cos phi + y_n sin phi] sin theta` for a
/// direction, unwrapped.
pub fn path_phase(array: &RisArray, wavenumber: f64, dir: Direction) -> Array2<f64> {
    let (u, v) = dir.uv();
    let xs = array.column_offsets();
    let ys = array.row_offsets();
    Array2::from_shape_fn((array.rows(), array.cols()), |(r, c)| {
        wavenumber * (xs[c] * u + ys[r] * v)
    })
}

/// Incident phase across the panel for a plane wave, unwrapped.
pub fn incident_phase(array: &RisArray, src: &PlaneWaveSource) -> Array2<f64> {
    path_phase(array, src.wavenumber(), Direction::new(src.theta(), src.phi()))
}

/// Phase-conjugate profile that aligns every element's phasor toward `aod`
/// for illumination from `aoa`.
pub fn steering_profile(
    array: &RisArray,
    wavenumber: f64,
    aoa: Direction,
    aod: Direction,
) -> PhaseProfile {
    let inc = path_phase(array, wavenumber, aoa);
    let out = path_phase(array, wavenumber, aod);
    let values = ndarray::Zip::from(&inc)
        .and(&out)
        .map_collect(|a, b| wrap_phase(-(a + b)));
    PhaseProfile::new(values).expect("finite phases")
}

/// Separable evaluator for `sum_{r,c} w[r,c] exp(j k (x_c u + y_r v))`.
#[derive(Debug, Clone)]
pub struct ApertureSum {
    xs: Vec<f64>,
    ys: Vec<f64>,
    wavenumber: f64,
}

impl ApertureSum {
    pub fn new(array: &RisArray, wavenumber: f64) -> Self {
        Self {
            xs: array.column_offsets(),
            ys: array.row_offsets(),
            wavenumber,
        }
    }

    pub fn rows(&self) -> usize {
        self.ys.len()
    }

    pub fn cols(&self) -> usize {
        self.xs.len()
    }

    /// Column and row steering factors for a direction.
    pub fn factors(&self, dir: Direction) -> (Vec<c64>, Vec<c64>) {
        let (u, v) = dir.uv();
        let ex = self
            .xs
            .iter()
            .map(|&x| c64::cis(self.wavenumber * x * u))
            .collect();
        let ey = self
            .ys
            .iter()
            .map(|&y| c64::cis(self.wavenumber * y * v))
            .collect();
        (ex, ey)
    }

    /// Weighted sum toward `dir`; `weights` is row-major.
    pub fn sum(&self, weights: &[c64], dir: Direction) -> c64 {
        let (ex, ey) = self.factors(dir);
        sum_with_factors(weights, &ex, &ey)
    }
}

#[inline]
pub(crate) fn sum_with_factors(weights: &[c64], ex: &[c64], ey: &[c64]) -> c64 {
    let cols = ex.len();
    weights
        .chunks_exact(cols)
        .zip(ey)
        .map(|(row, &fy)| {
            let inner: c64 = row.iter().zip(ex).map(|(w, fx)| w * fx).sum();
            inner * fy
        })
        .sum()
}

/// `exp(j (Phi_n + psi_inc_n))`, row-major.
pub fn element_weights(array: &RisArray, phase: &PhaseProfile, src: &PlaneWaveSource) -> Vec<c64> {
    let inc = incident_phase(array, src);
    phase
        .as_slice()
        .iter()
        .zip(inc.iter())
        .map(|(p, i)| c64::cis(p + i))
        .collect()
}

/// Complex response toward a single direction.
pub fn field_at(
    array: &RisArray,
    phase: &PhaseProfile,
    src: &PlaneWaveSource,
    cfg: &FarFieldConfig,
    dir: Direction,
) -> Result<c64> {
    phase.check_matches(array)?;
    let weights = element_weights(array, phase, src);
    let kernel = ApertureSum::new(array, src.wavenumber());
    let scale = cfg.e0 * src.amplitude() * cfg.element_gain(dir.theta);
    Ok(kernel.sum(&weights, dir) * scale)
}

/// `|E(theta_d, phi_d)|`, evaluated exactly at the direction.
pub fn field_at_poi(
    array: &RisArray,
    phase: &PhaseProfile,
    src: &PlaneWaveSource,
    cfg: &FarFieldConfig,
    dir: Direction,
) -> Result<PoiSample> {
    Ok(PoiSample {
        direction: dir,
        magnitude: field_at(array, phase, src, cfg, dir)?.norm(),
    })
}

/// The coherent upper bound `E0 * A * N_el * cos^(2 rho)(theta)`.
pub fn coherence_bound(
    array: &RisArray,
    src: &PlaneWaveSource,
    cfg: &FarFieldConfig,
    theta: f64,
) -> f64 {
    cfg.e0 * src.amplitude() * array.len() as f64 * cfg.element_gain(theta)
}

/// Full angular map of the scattered field. Directions are evaluated in
/// parallel; each direction's sum runs in a fixed element order.
pub fn scattered_field(
    array: &RisArray,
    phase: &PhaseProfile,
    src: &PlaneWaveSource,
    grid: &Arc<AngularGrid>,
    cfg: &FarFieldConfig,
) -> Result<AngularFieldMap> {
    phase.check_matches(array)?;
    let weights = element_weights(array, phase, src);
    let scale = cfg.e0 * src.amplitude();
    map_from_weights(array, &weights, src.wavenumber(), scale, grid, cfg)
}

pub(crate) fn map_from_weights(
    array: &RisArray,
    weights: &[c64],
    wavenumber: f64,
    scale: f64,
    grid: &Arc<AngularGrid>,
    cfg: &FarFieldConfig,
) -> Result<AngularFieldMap> {
    let kernel = ApertureSum::new(array, wavenumber);
    let (n_theta, n_phi) = grid.shape();
    let values: Vec<c64> = (0..n_theta)
        .into_par_iter()
        .flat_map_iter(|i| {
            let theta = grid.theta()[i];
            let gain = scale * cfg.element_gain(theta);
            let kernel = &kernel;
            grid.phi()
                .iter()
                .map(move |&phi| kernel.sum(weights, Direction::new(theta, phi)) * gain)
        })
        .collect();
    let values = Array2::from_shape_vec((n_theta, n_phi), values).expect("grid-sized buffer");
    AngularFieldMap::new(grid.clone(), values)
}
