//! Even-degree real spherical harmonics on HEALPix grids.
//!
//! Only even degrees are represented, so every synthesised function is
//! antipodally symmetric. Coefficients are ordered by degree `l = 0, 2, 4, ...`
//! and, within a degree, by order `m = -l..=l`.
//!
//! Convention (orthonormal on the full sphere, no Condon-Shortley phase):
//!
//! ```text
//! Y_l0      =      N_l0 P_l^0(cos t)
//! Y_lm, m>0 = sqrt2 N_lm P_l^m(cos t) cos(m p)
//! Y_lm, m<0 = sqrt2 N_l|m| P_l^|m|(cos t) sin(|m| p)
//! ```

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::healpix::{CapMask, HealpixGrid};
use crate::signal::SphericalSignal;

/// Number of even-degree coefficients up to `l_max`.
pub fn n_coeffs(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 2) / 2
}

/// Position of `(l, m)` in the coefficient vector.
pub fn coeff_index(l: usize, m: i64) -> usize {
    debug_assert!(l.is_multiple_of(2) && m.unsigned_abs() as usize <= l);
    l * l.saturating_sub(1) / 2 + (m + l as i64) as usize
}

/// `(l, m)` pairs in storage order.
pub fn degree_order_pairs(l_max: usize) -> Vec<(usize, i64)> {
    (0..=l_max)
        .step_by(2)
        .flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m)))
        .collect()
}

fn check_l_max(l_max: usize) -> Result<()> {
    if !l_max.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("l_max must be even, got {l_max}")));
    }
    Ok(())
}

/// All even-degree real SH up to `l_max` at `(theta, phi)`, in storage order.
pub fn real_sh(l_max: usize, theta: f64, phi: f64) -> Vec<f64> {
    let x = theta.cos();
    let s = theta.sin();
    // plm[m][l] holds N_lm P_l^m(x)
    let mut plm = vec![vec![0.0; l_max + 1]; l_max + 1];
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            pmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s;
        }
        plm[m][m] = pmm;
        if m < l_max {
            plm[m][m + 1] = x * ((2 * m + 3) as f64).sqrt() * pmm;
        }
        for l in (m + 2)..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            plm[m][l] = a * (x * plm[m][l - 1] - b * plm[m][l - 2]);
        }
    }
    let mut out = Vec::with_capacity(n_coeffs(l_max));
    for l in (0..=l_max).step_by(2) {
        for m in -(l as i64)..=(l as i64) {
            let am = m.unsigned_abs() as usize;
            let v = match m {
                0 => plm[0][l],
                m if m > 0 => std::f64::consts::SQRT_2 * plm[am][l] * (m as f64 * phi).cos(),
                _ => std::f64::consts::SQRT_2 * plm[am][l] * (am as f64 * phi).sin(),
            };
            out.push(v);
        }
    }
    out
}

/// Dense basis matrix, one row per included pixel (ascending pixel index)
/// and one column per coefficient.
pub fn basis_matrix(grid: &HealpixGrid, l_max: usize, mask: Option<&CapMask>) -> Result<DMatrix<f64>> {
    check_l_max(l_max)?;
    let pixels: Vec<usize> = match mask {
        Some(m) => m.pixels().to_vec(),
        None => (0..grid.n_pix()).collect(),
    };
    let nc = n_coeffs(l_max);
    if pixels.len() < nc {
        return Err(Error::Underdetermined { valid: pixels.len(), coeffs: nc });
    }
    let mut b = DMatrix::zeros(pixels.len(), nc);
    for (row, &p) in pixels.iter().enumerate() {
        let (t, ph) = grid.center(p);
        for (col, y) in real_sh(l_max, t, ph).into_iter().enumerate() {
            b[(row, col)] = y;
        }
    }
    Ok(b)
}

/// Coefficients of an even-degree real SH expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoeffs {
    l_max: usize,
    values: Vec<f64>,
}

impl ShCoeffs {
    pub fn new(l_max: usize, values: Vec<f64>) -> Result<Self> {
        check_l_max(l_max)?;
        if values.len() != n_coeffs(l_max) {
            return Err(Error::Shape(format!("{} coefficients for l_max {l_max}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite SH coefficient".into()));
        }
        Ok(Self { l_max, values })
    }

    pub fn zeros(l_max: usize) -> Self {
        Self { l_max, values: vec![0.0; n_coeffs(l_max)] }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, l: usize, m: i64) -> f64 {
        self.values[coeff_index(l, m)]
    }

    /// Function value at a direction.
    pub fn eval_at(&self, theta: f64, phi: f64) -> f64 {
        real_sh(self.l_max, theta, phi).iter().zip(&self.values).map(|(y, c)| y * c).sum()
    }
}

/// A basis matrix together with its least-squares pseudo-inverse, bound to
/// one grid and pixel subset. Fitting followed by evaluation is the
/// orthogonal projection onto the even-degree band-limited subspace.
#[derive(Debug, Clone)]
pub struct ShBasis {
    l_max: usize,
    n_side: u32,
    n_pix: usize,
    pixels: Vec<usize>,
    matrix: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl ShBasis {
    pub fn new(grid: &HealpixGrid, l_max: usize, mask: Option<&CapMask>) -> Result<Self> {
        let matrix = basis_matrix(grid, l_max, mask)?;
        let pixels = match mask {
            Some(m) => m.pixels().to_vec(),
            None => (0..grid.n_pix()).collect(),
        };
        let svd = matrix.clone().svd(true, true);
        let tol = 1e-10 * svd.singular_values.max();
        let pinv = svd.pseudo_inverse(tol).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(Self { l_max, n_side: grid.n_side(), n_pix: grid.n_pix(), pixels, matrix, pinv })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Least-squares pseudo-inverse, `n_coeffs x n_pixels`.
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// Minimum-norm least-squares fit over the basis pixels.
    pub fn fit(&self, signal: &SphericalSignal) -> Result<ShCoeffs> {
        if signal.n_side() != self.n_side {
            return Err(Error::Shape(format!("signal n_side {} vs basis n_side {}", signal.n_side(), self.n_side)));
        }
        let vals: Vec<f64> = self.pixels.iter().map(|&p| signal.values()[p]).collect();
        self.fit_values(&vals)
    }

    /// Fit from values already gathered in basis-pixel order.
    pub fn fit_values(&self, values: &[f64]) -> Result<ShCoeffs> {
        if values.len() != self.pixels.len() {
            return Err(Error::Shape(format!("{} values for {} basis pixels", values.len(), self.pixels.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite signal value".into()));
        }
        let mut c = vec![0.0; self.pinv.nrows()];
        for (j, &v) in values.iter().enumerate() {
            for (i, ci) in c.iter_mut().enumerate() {
                *ci += self.pinv[(i, j)] * v;
            }
        }
        Ok(ShCoeffs { l_max: self.l_max, values: c })
    }

    /// Synthesis on the basis pixels; other pixels are zero and invalid.
    pub fn evaluate(&self, coeffs: &ShCoeffs) -> Result<SphericalSignal> {
        let vals = self.evaluate_values(coeffs)?;
        let mut values = vec![0.0; self.n_pix];
        let mut valid = vec![false; self.n_pix];
        for (&p, v) in self.pixels.iter().zip(vals) {
            values[p] = v;
            valid[p] = true;
        }
        Ok(SphericalSignal::from_parts(self.n_side, values, valid))
    }

    /// Synthesis in basis-pixel order.
    pub fn evaluate_values(&self, coeffs: &ShCoeffs) -> Result<Vec<f64>> {
        if coeffs.l_max != self.l_max {
            return Err(Error::Shape(format!("coeff l_max {} vs basis l_max {}", coeffs.l_max, self.l_max)));
        }
        Ok((0..self.matrix.nrows())
            .map(|i| (0..self.matrix.ncols()).map(|j| self.matrix[(i, j)] * coeffs.values[j]).sum())
            .collect())
    }
}

/// Evaluate coefficients on a grid, optionally restricted to a mask.
pub fn evaluate(coeffs: &ShCoeffs, grid: &HealpixGrid, mask: Option<&CapMask>) -> SphericalSignal {
    let n = grid.n_pix();
    let mut values = vec![0.0; n];
    let mut valid = vec![false; n];
    for p in 0..n {
        if mask.is_none_or(|m| m.contains(p)) {
            let (t, ph) = grid.center(p);
            values[p] = coeffs.eval_at(t, ph);
            valid[p] = true;
        }
    }
    SphericalSignal::from_parts(grid.n_side(), values, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_indices() {
        assert_eq!(n_coeffs(0), 1);
        assert_eq!(n_coeffs(8), 45);
        let pairs = degree_order_pairs(8);
        assert_eq!(pairs.len(), 45);
        for (k, &(l, m)) in pairs.iter().enumerate() {
            assert_eq!(coeff_index(l, m), k);
        }
    }

    #[test]
    fn y00_constant() {
        let g = HealpixGrid::with_n_side(2).unwrap();
        let b = basis_matrix(&g, 0, None).unwrap();
        assert_eq!(b.ncols(), 1);
        for v in b.iter() {
            assert!((v - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn y20_at_equator() {
        let y = real_sh(2, PI / 2.0, 0.3);
        let expected = -0.5 * (5.0 / (4.0 * PI)).sqrt();
        assert!((y[coeff_index(2, 0)] - expected).abs() < 1e-14);
    }

    #[test]
    fn odd_l_max_rejected() {
        let g = HealpixGrid::with_n_side(2).unwrap();
        assert!(basis_matrix(&g, 3, None).is_err());
    }

    #[test]
    fn masked_basis_underdetermined() {
        let g = HealpixGrid::with_n_side(2).unwrap();
        let m = CapMask::cap(&g, 0.5).unwrap();
        assert!(matches!(basis_matrix(&g, 8, Some(&m)), Err(Error::Underdetermined { .. })));
    }

    #[test]
    fn zero_coeffs_zero_signal() {
        let g = HealpixGrid::with_n_side(4).unwrap();
        let s = evaluate(&ShCoeffs::zeros(8), &g, None);
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_signal_fit() {
        let g = HealpixGrid::with_n_side(16).unwrap();
        let basis = ShBasis::new(&g, 8, None).unwrap();
        let s = SphericalSignal::new(&g, vec![1.0; g.n_pix()], vec![true; g.n_pix()]).unwrap();
        let c = basis.fit(&s).unwrap();
        assert!((c.values()[0] - (4.0 * PI).sqrt()).abs() < 1e-8);
        for &v in &c.values()[1..] {
            assert!(v.abs() < 1e-8);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let g = HealpixGrid::with_n_side(4).unwrap();
        let basis = ShBasis::new(&g, 4, None).unwrap();
        let mut vals = vec![0.0; g.n_pix()];
        vals[3] = f64::NAN;
        assert!(basis.fit_values(&vals).is_err());
    }
}
