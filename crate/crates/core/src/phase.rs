use std::f64::consts::TAU;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::RisArray;

/// Reduces an angle to `[0, 2 pi)`.
#[inline]
pub fn wrap_phase(angle: f64) -> f64 {
    let w = angle.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly TAU
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Per-element reflection phases of one panel, stored row-major and always
/// canonicalized to `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    values: Array2<f64>,
}

impl PhaseProfile {
    /// Wraps every entry on construction. Fails on non-finite input.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::invalid("phase", "non-finite entry"));
        }
        Ok(Self {
            values: values.mapv(wrap_phase),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let actual = values.len();
        let arr = Array2::from_shape_vec((rows, cols), values).map_err(|_| {
            Error::DimensionMismatch {
                what: "phase profile",
                expected: format!("{rows}x{cols} = {}", rows * cols),
                actual: actual.to_string(),
            }
        })?;
        Self::new(arr)
    }

    pub fn uniform(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            values: Array2::from_elem((rows, cols), wrap_phase(value)),
        }
    }

    pub fn zeros_for(array: &RisArray) -> Self {
        Self::uniform(array.rows(), array.cols(), 0.0)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Row-major flat view.
    pub fn as_slice(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("phase profiles are always standard layout")
    }

    pub fn get(&self, index: usize) -> f64 {
        self.as_slice()[index]
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let cols = self.cols();
        self.values[(index / cols, index % cols)] = wrap_phase(value);
    }

    /// Adds `offset` to every element and re-wraps.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            values: self.values.mapv(|v| wrap_phase(v + offset)),
        }
    }

    pub fn check_matches(&self, array: &RisArray) -> Result<()> {
        if self.rows() != array.rows() || self.cols() != array.cols() {
            return Err(Error::DimensionMismatch {
                what: "phase profile vs array",
                expected: format!("{}x{}", array.rows(), array.cols()),
                actual: format!("{}x{}", self.rows(), self.cols()),
            });
        }
        Ok(())
    }
}
