//! Panel geometry and illumination sources.
//!
//! A [`RisArray`] is a rectangular lattice of `rows x cols` elements centred on
//! its `origin`. Element `n = r * cols + c` sits at the local offset
//! `(dx * (c - (cols - 1) / 2), dy * (r - (rows - 1) / 2))` along the in-plane
//! axes `(u, v)`, so the lattice is symmetric about the panel centre.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::Vector3;

use crate::error::{invalid, Result};

pub type Vec3 = Vector3<f64>;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const ORTHO_TOL: f64 = 1e-12;

pub fn wavelength_from_frequency(frequency: f64) -> f64 {
    SPEED_OF_LIGHT / frequency
}

/// One reconfigurable panel: lattice dimensions, spacing and placement.
#[derive(Debug, Clone, PartialEq)]
pub struct RisArray {
    rows: usize,
    cols: usize,
    spacing_x: f64,
    spacing_y: f64,
    origin: Vec3,
    axis_u: Vec3,
    axis_v: Vec3,
    normal: Vec3,
}

impl RisArray {
    /// A panel in the `z = 0` plane centred on the world origin, with columns
    /// along `x` and rows along `y`. This is the far-field reference frame.
    pub fn planar(rows: usize, cols: usize, spacing_x: f64, spacing_y: f64) -> Result<Self> {
        Self::new(
            rows,
            cols,
            spacing_x,
            spacing_y,
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
        )
    }

    /// A panel centred on `origin` whose columns run along `axis_u` and rows
    /// along `axis_v`. The normal is `axis_u x axis_v`.
    pub fn new(
        rows: usize,
        cols: usize,
        spacing_x: f64,
        spacing_y: f64,
        origin: Vec3,
        axis_u: Vec3,
        axis_v: Vec3,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("rows/cols", format!("{rows}x{cols} panel has no elements")));
        }
        if !(spacing_x > 0.0 && spacing_x.is_finite()) {
            return Err(invalid("spacing_x", format!("{spacing_x} must be positive")));
        }
        if !(spacing_y > 0.0 && spacing_y.is_finite()) {
            return Err(invalid("spacing_y", format!("{spacing_y} must be positive")));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(invalid("origin", "non-finite coordinate"));
        }
        if (axis_u.norm() - 1.0).abs() > ORTHO_TOL || (axis_v.norm() - 1.0).abs() > ORTHO_TOL {
            return Err(invalid("orientation", "in-plane axes must be unit vectors"));
        }
        if axis_u.dot(&axis_v).abs() > ORTHO_TOL {
            return Err(invalid("orientation", "in-plane axes must be orthogonal"));
        }
        let normal = axis_u.cross(&axis_v);
        Ok(Self {
            rows,
            cols,
            spacing_x,
            spacing_y,
            origin,
            axis_u,
            axis_v,
            normal,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of elements, `rows * cols`.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing_x(&self) -> f64 {
        self.spacing_x
    }

    pub fn spacing_y(&self) -> f64 {
        self.spacing_y
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn axis_u(&self) -> Vec3 {
        self.axis_u
    }

    pub fn axis_v(&self) -> Vec3 {
        self.axis_v
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    /// Column offsets from the panel centre along `u`, one per column.
    pub fn column_offsets(&self) -> Vec<f64> {
        let centre = (self.cols as f64 - 1.0) / 2.0;
        (0..self.cols)
            .map(|c| self.spacing_x * (c as f64 - centre))
            .collect()
    }

    /// Row offsets from the panel centre along `v`, one per row.
    pub fn row_offsets(&self) -> Vec<f64> {
        let centre = (self.rows as f64 - 1.0) / 2.0;
        (0..self.rows)
            .map(|r| self.spacing_y * (r as f64 - centre))
            .collect()
    }

    /// In-plane `(x, y)` offsets of every element in row-major order.
    pub fn local_offsets(&self) -> Vec<(f64, f64)> {
        let xs = self.column_offsets();
        let ys = self.row_offsets();
        ys.iter()
            .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
            .collect()
    }

    /// World positions of every element in row-major order.
    pub fn element_positions(&self) -> Vec<Vec3> {
        self.local_offsets()
            .into_iter()
            .map(|(x, y)| self.origin + self.axis_u * x + self.axis_v * y)
            .collect()
    }

    /// Side lengths `((cols - 1) dx, (rows - 1) dy)` of the element lattice.
    pub fn aperture_span(&self) -> (f64, f64) {
        (
            (self.cols as f64 - 1.0) * self.spacing_x,
            (self.rows as f64 - 1.0) * self.spacing_y,
        )
    }
}

/// Uniform plane wave illuminating a panel from `(theta, phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneWaveSource {
    amplitude: f64,
    wavelength: f64,
    theta: f64,
    phi: f64,
}

impl PlaneWaveSource {
    pub fn new(amplitude: f64, wavelength: f64, theta: f64, phi: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(invalid("amplitude", format!("{amplitude} must be positive")));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(invalid("wavelength", format!("{wavelength} must be positive")));
        }
        if !(0.0..FRAC_PI_2).contains(&theta) {
            return Err(invalid("theta_i", format!("{theta} rad outside [0, pi/2)")));
        }
        if !(0.0..TAU).contains(&phi) {
            return Err(invalid("phi_i", format!("{phi} rad outside [0, 2pi)")));
        }
        Ok(Self {
            amplitude,
            wavelength,
            theta,
            phi,
        })
    }

    pub fn from_frequency(amplitude: f64, frequency: f64, theta: f64, phi: f64) -> Result<Self> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(invalid("frequency", format!("{frequency} must be positive")));
        }
        Self::new(amplitude, wavelength_from_frequency(frequency), theta, phi)
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// `2 pi / lambda`.
    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength
    }
}

/// Omnidirectional spherical-wave emitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSource {
    amplitude: f64,
    frequency: f64,
    position: Vec3,
}

impl PointSource {
    pub fn new(amplitude: f64, frequency: f64, position: Vec3) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(invalid("amplitude", format!("{amplitude} must be positive")));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(invalid("frequency", format!("{frequency} must be positive")));
        }
        if !position.iter().all(|c| c.is_finite()) {
            return Err(invalid("position", "non-finite coordinate"));
        }
        Ok(Self {
            amplitude,
            frequency,
            position,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    pub fn wavelength(&self) -> f64 {
        wavelength_from_frequency(self.frequency)
    }

    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength()
    }
}
