//! Reconstruction, sparsity and non-negativity losses, their gradient, and
//! a per-pattern projected-gradient solver.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{AtomSet, Fodf, KernelBank};
use crate::sh::{basis_matrix, ShCoeffs};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub sigma_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_r: 1.0, lambda_s: 0.1, sigma_s: 0.05 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_r >= 0.0 && self.lambda_s >= 0.0 && self.sigma_s > 0.0) {
            return Err(Error::InvalidInput(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_s: f64,
    pub l_n: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn new(l_r: f64, l_s: f64, l_n: f64) -> Self {
        Self { l_r, l_s, l_n, l_total: l_r + l_s + l_n }
    }
}

/// Pearson correlation of two equally long vectors.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("pcc of lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `||s - s_r||^2 + lambda_r (1 - PCC(s, s_r))`; an undefined PCC counts as 0.
pub fn reconstruction_loss(s: &[f64], s_r: &[f64], w: &LossWeights) -> Result<f64> {
    if s.len() != s_r.len() {
        return Err(Error::Shape(format!("reconstruction of length {} for {} samples", s_r.len(), s.len())));
    }
    let l2: f64 = s.iter().zip(s_r).map(|(a, b)| (a - b) * (a - b)).sum();
    let r = match pcc(s, s_r) {
        Ok(r) => r,
        Err(Error::ZeroVariance) => {
            log::debug!("zero-variance reconstruction; PCC taken as 0");
            0.0
        }
        Err(e) => return Err(e),
    };
    Ok(l2 + w.lambda_r * (1.0 - r))
}

/// `lambda_s * sum log(1 + f^2 / (2 sigma_s^2))`.
pub fn sparsity_loss(fodf: &[f64], w: &LossWeights) -> f64 {
    let two_s2 = 2.0 * w.sigma_s * w.sigma_s;
    w.lambda_s * fodf.iter().map(|f| (f * f / two_s2).ln_1p()).sum::<f64>()
}

/// Sum of squares of the negative entries.
pub fn nonnegativity_loss(fodf: &[f64]) -> f64 {
    fodf.iter().filter(|f| **f < 0.0).map(|f| f * f).sum()
}

pub fn total_loss(s: &[f64], s_r: &[f64], fodf_smoothed: &[f64], w: &LossWeights) -> Result<LossBreakdown> {
    Ok(LossBreakdown::new(
        reconstruction_loss(s, s_r, w)?,
        sparsity_loss(fodf_smoothed, w),
        nonnegativity_loss(fodf_smoothed),
    ))
}

/// Divide by the maximum; a non-positive maximum leaves the input unchanged.
pub fn max_normalize(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m > 0.0 {
        s.iter().map(|v| v / m).collect()
    } else {
        s.to_vec()
    }
}

/// Even-degree SH smoothing of per-atom values.
///
/// Atom weights are spread to both antipodal pixels of the fODF grid,
/// fitted by least squares and evaluated back at the atoms:
/// `coeffs = C w`, `smoothed = P w`.
#[derive(Debug, Clone)]
pub struct AtomSmoother {
    l_max: usize,
    coeff_map: DMatrix<f64>,
    projection: DMatrix<f64>,
}

impl AtomSmoother {
    pub fn new(atoms: &AtomSet, l_max: usize) -> Result<Self> {
        let grid = atoms.grid();
        let b = basis_matrix(grid, l_max, None)?;
        let svd = b.clone().svd(true, true);
        let tol = 1e-10 * svd.singular_values.max();
        let pinv = svd.pseudo_inverse(tol).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let n_atoms = atoms.len();
        let mut dup = DMatrix::zeros(grid.n_pix(), n_atoms);
        for (p, &a) in atoms.pixel_atom().iter().enumerate() {
            dup[(p, a)] = 1.0;
        }
        let coeff_map = &pinv * dup;
        let b_atoms = DMatrix::from_fn(n_atoms, b.ncols(), |i, j| b[(atoms.atom_pixel()[i], j)]);
        let projection = b_atoms * &coeff_map;
        Ok(Self { l_max, coeff_map, projection })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// `n_coeffs x n_atoms`.
    pub fn coeff_map(&self) -> &DMatrix<f64> {
        &self.coeff_map
    }

    /// `n_atoms x n_atoms`.
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn n_atoms(&self) -> usize {
        self.projection.ncols()
    }

    pub fn smooth(&self, w: &[f64]) -> Vec<f64> {
        matvec(&self.projection, w)
    }

    pub fn smooth_transpose(&self, g: &[f64]) -> Vec<f64> {
        matvec_t(&self.projection, g)
    }

    pub fn coeffs(&self, w: &[f64]) -> ShCoeffs {
        ShCoeffs::new(self.l_max, matvec(&self.coeff_map, w)).expect("finite coefficients")
    }

    pub fn fodf(&self, w: &[f64]) -> Fodf {
        Fodf { weights: w.to_vec(), sh: self.coeffs(w) }
    }
}

pub(crate) fn matvec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            for (o, v) in out.iter_mut().zip(m.column(j).iter()) {
                *o += v * xj;
            }
        }
    }
    out
}

pub(crate) fn matvec_t(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Total loss as a function of raw atom weights for one normalized pattern.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub bank: &'a KernelBank,
    pub smoother: &'a AtomSmoother,
    pub weights: LossWeights,
    /// Evaluate the sparsity and non-negativity terms after SH smoothing.
    pub sparsity_on_smoothed: bool,
}

impl<'a> Objective<'a> {
    pub fn new(bank: &'a KernelBank, smoother: &'a AtomSmoother, weights: LossWeights) -> Self {
        Self { bank, smoother, weights, sparsity_on_smoothed: true }
    }

    fn check(&self, w: &[f64], s: &[f64]) -> Result<()> {
        if w.len() != self.bank.n_atoms() || self.smoother.n_atoms() != self.bank.n_atoms() {
            return Err(Error::Shape(format!("{} weights for {} atoms", w.len(), self.bank.n_atoms())));
        }
        if s.len() != self.bank.n_rows() {
            return Err(Error::Shape(format!("{} samples for a bank of {} rows", s.len(), self.bank.n_rows())));
        }
        Ok(())
    }

    pub fn value(&self, w: &[f64], s: &[f64]) -> Result<LossBreakdown> {
        self.check(w, s)?;
        let u = self.smoother.smooth(w);
        let r = self.bank.apply(&u)?;
        let reg = if self.sparsity_on_smoothed { &u[..] } else { w };
        total_loss(s, &r, reg, &self.weights)
    }

    /// Loss and its exact gradient with respect to the raw atom weights.
    pub fn value_and_gradient(&self, w: &[f64], s: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
        self.check(w, s)?;
        let lw = &self.weights;
        let u = self.smoother.smooth(w);
        let r = self.bank.apply(&u)?;
        let n = s.len() as f64;

        // d/dr of ||s - r||^2 - lambda_r PCC(s, r)
        let mut g_r: Vec<f64> = s.iter().zip(&r).map(|(a, b)| 2.0 * (b - a)).collect();
        let pcc_val = match pcc(s, &r) {
            Ok(p) => {
                let ms = s.iter().sum::<f64>() / n;
                let mr = r.iter().sum::<f64>() / n;
                let ns = s.iter().map(|v| (v - ms).powi(2)).sum::<f64>().sqrt();
                let nr2 = r.iter().map(|v| (v - mr).powi(2)).sum::<f64>();
                let nr = nr2.sqrt();
                for ((g, sv), rv) in g_r.iter_mut().zip(s).zip(&r) {
                    let dp = (sv - ms) / (ns * nr) - p * (rv - mr) / nr2;
                    *g -= lw.lambda_r * dp;
                }
                p
            }
            Err(Error::ZeroVariance) => 0.0,
            Err(e) => return Err(e),
        };
        let l2: f64 = s.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum();
        let l_r = l2 + lw.lambda_r * (1.0 - pcc_val);

        let mut g_u = self.bank.apply_transpose(&g_r);
        let two_s2 = 2.0 * lw.sigma_s * lw.sigma_s;
        let reg_grad = |x: f64| lw.lambda_s * 2.0 * x / (two_s2 + x * x) + if x < 0.0 { 2.0 * x } else { 0.0 };
        let (l_s, l_n);
        if self.sparsity_on_smoothed {
            l_s = sparsity_loss(&u, lw);
            l_n = nonnegativity_loss(&u);
            for (g, &x) in g_u.iter_mut().zip(&u) {
                *g += reg_grad(x);
            }
            Ok((LossBreakdown::new(l_r, l_s, l_n), self.smoother.smooth_transpose(&g_u)))
        } else {
            l_s = sparsity_loss(w, lw);
            l_n = nonnegativity_loss(w);
            let mut g = self.smoother.smooth_transpose(&g_u);
            for (gi, &x) in g.iter_mut().zip(w) {
                *gi += reg_grad(x);
            }
            Ok((LossBreakdown::new(l_r, l_s, l_n), g))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub step: f64,
    pub tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iters: 500, step: 0.05, tol: 1e-6 }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.step > 0.0) || !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("invalid solver options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub fodf: Fodf,
    /// Loss of every accepted iterate, starting with the initial point.
    pub trace: Vec<LossBreakdown>,
    pub converged: bool,
}

pub const INITIAL_WEIGHT: f64 = 1e-3;

/// Minimize the total loss over non-negative atom weights by accelerated
/// projected gradient descent with backtracking (the step halves until the
/// quadratic upper bound holds) and a restart whenever momentum would
/// increase the loss. `s` must be in bank-row order; it is max-normalized here.
pub fn solve_direct(s: &[f64], objective: &Objective, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    objective.weights.validate()?;
    let s = max_normalize(s);
    let n = objective.bank.n_atoms();
    let mut x = vec![INITIAL_WEIGHT; n];
    let mut fx = objective.value(&x, &s)?;
    let mut trace = vec![fx];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut step = opts.step;
    let mut converged = false;
    let mut restarted = false;

    for _ in 0..opts.max_iters {
        let (fy, gy) = objective.value_and_gradient(&y, &s)?;
        let (x_new, f_new) = loop {
            let cand: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| (a - step * g).max(0.0)).collect();
            let fc = objective.value(&cand, &s)?;
            let mut lin = 0.0;
            let mut quad = 0.0;
            for ((c, a), g) in cand.iter().zip(&y).zip(&gy) {
                lin += g * (c - a);
                quad += (c - a) * (c - a);
            }
            if fc.l_total <= fy.l_total + lin + quad / (2.0 * step) + 1e-15 * fy.l_total.abs() {
                break (cand, fc);
            }
            step *= 0.5;
            if step < 1e-300 {
                break (x.clone(), fx);
            }
        };
        if !f_new.l_total.is_finite() {
            return Err(Error::NonFiniteLoss { batch: 0 });
        }
        if f_new.l_total > fx.l_total {
            if restarted {
                break;
            }
            y = x.clone();
            t = 1.0;
            restarted = true;
            continue;
        }
        restarted = false;
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        y = x_new.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        t = t_new;
        let rel = (fx.l_total - f_new.l_total) / fx.l_total.abs().max(1e-300);
        x = x_new;
        fx = f_new;
        trace.push(fx);
        if rel < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(SolveResult { fodf: objective.smoother.fodf(&x), trace, converged })
}
