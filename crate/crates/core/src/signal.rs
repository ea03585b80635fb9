use crate::error::{Error, Result};
use crate::healpix::{CapMask, HealpixGrid};

/// A real function sampled at the pixel centres of one HEALPix grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalSignal {
    n_side: u32,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl SphericalSignal {
    pub fn zeros(grid: &HealpixGrid) -> Self {
        Self { n_side: grid.n_side(), values: vec![0.0; grid.n_pix()], valid: vec![true; grid.n_pix()] }
    }

    pub fn new(grid: &HealpixGrid, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != grid.n_pix() || valid.len() != grid.n_pix() {
            return Err(Error::Shape(format!(
                "signal has {} values / {} flags for {} pixels",
                values.len(),
                valid.len(),
                grid.n_pix()
            )));
        }
        Ok(Self { n_side: grid.n_side(), values, valid })
    }

    /// Full-grid signal from values given on the pixels of `mask`; the rest
    /// is zero and flagged invalid.
    pub fn from_masked(mask: &CapMask, masked: &[f64]) -> Result<Self> {
        if masked.len() != mask.len() {
            return Err(Error::Shape(format!("{} values for a mask of {}", masked.len(), mask.len())));
        }
        let n_pix = mask.included().len();
        let mut values = vec![0.0; n_pix];
        for (&p, &v) in mask.pixels().iter().zip(masked) {
            values[p] = v;
        }
        Ok(Self { n_side: mask.n_side(), values, valid: mask.included().to_vec() })
    }

    pub(crate) fn from_parts(n_side: u32, values: Vec<f64>, valid: Vec<bool>) -> Self {
        Self { n_side, values, valid }
    }

    pub fn n_side(&self) -> u32 {
        self.n_side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid[idx]
    }

    pub fn set_valid(&mut self, idx: usize, valid: bool) {
        self.valid[idx] = valid;
    }

    /// Values at the pixels of `mask`, in mask order.
    pub fn gather(&self, mask: &CapMask) -> Result<Vec<f64>> {
        if mask.n_side() != self.n_side {
            return Err(Error::Shape(format!("mask n_side {} vs signal n_side {}", mask.n_side(), self.n_side)));
        }
        Ok(mask.pixels().iter().map(|&p| self.values[p]).collect())
    }
}
