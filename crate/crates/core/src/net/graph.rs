//! Weighted neighbour graph of a masked HEALPix grid and its rescaled Laplacian.

use crate::error::{Error, Result};
use crate::healpix::{CapMask, HealpixGrid};

const POWER_STEPS: usize = 100;

/// Sparse symmetric graph over the pixels of a mask, in mask order.
#[derive(Debug, Clone)]
pub struct SphereGraph {
    pixels: Vec<usize>,
    rho: f64,
    lambda_max: f64,
    // edge weights, CSR without diagonal
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    degree: Vec<f64>,
    components: usize,
}

fn chord2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

impl SphereGraph {
    /// Gaussian-weighted neighbour graph; `rho = None` uses the mean chord
    /// length of the neighbour pairs.
    pub fn build(grid: &HealpixGrid, mask: &CapMask, rho: Option<f64>) -> Result<Self> {
        if mask.n_side() != grid.n_side() {
            return Err(Error::Shape(format!("mask n_side {} vs grid n_side {}", mask.n_side(), grid.n_side())));
        }
        if mask.len() < 2 {
            return Err(Error::InvalidInput("graph needs at least two masked pixels".into()));
        }
        let pos = mask.positions();
        let mut adj: Vec<Vec<usize>> = Vec::with_capacity(mask.len());
        for &p in mask.pixels() {
            let mut nb: Vec<usize> = grid.neighbors(p)?.into_iter().filter_map(|q| pos[q]).collect();
            nb.sort_unstable();
            nb.dedup();
            adj.push(nb);
        }
        let vec = |i: usize| grid.vector(mask.pixels()[i]);
        let rho = match rho {
            Some(r) if r > 0.0 => r,
            Some(r) => return Err(Error::InvalidInput(format!("edge width {r} must be positive"))),
            None => {
                let (mut sum, mut n) = (0.0, 0usize);
                for (i, nb) in adj.iter().enumerate() {
                    for &j in nb {
                        sum += chord2(vec(i), vec(j)).sqrt();
                        n += 1;
                    }
                }
                sum / n.max(1) as f64
            }
        };
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut degree = Vec::with_capacity(adj.len());
        for (i, nb) in adj.iter().enumerate() {
            let mut d = 0.0;
            for &j in nb {
                let w = (-chord2(vec(i), vec(j)) / (2.0 * rho * rho)).exp();
                cols.push(j);
                weights.push(w);
                d += w;
            }
            degree.push(d);
            row_ptr.push(cols.len());
        }
        let mut g = Self { pixels: mask.pixels().to_vec(), rho, lambda_max: 1.0, row_ptr, cols, weights, degree, components: 0 };
        g.components = g.count_components();
        if g.components > 1 {
            log::warn!("masked graph has {} connected components", g.components);
        }
        g.lambda_max = g.power_iteration();
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.pixels.len()
    }

    /// Grid pixel of each node.
    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Neighbours of node `i` with their edge weights.
    pub fn edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    /// Dense combinatorial Laplacian `L = D - W`.
    pub fn laplacian_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n_nodes();
        let mut l = vec![vec![0.0; n]; n];
        for (i, row) in l.iter_mut().enumerate() {
            row[i] = self.degree[i];
            for (j, w) in self.edges(i) {
                row[j] -= w;
            }
        }
        l
    }

    /// `out = L x`.
    pub fn laplacian_mul(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n_nodes() {
            let mut acc = self.degree[i] * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc -= self.weights[k] * x[self.cols[k]];
            }
            out[i] = acc;
        }
    }

    /// `out = (2 L / lambda_max - I) x`.
    pub fn scaled_mul(&self, x: &[f64], out: &mut [f64]) {
        let s = 2.0 / self.lambda_max;
        for i in 0..self.n_nodes() {
            let mut acc = (s * self.degree[i] - 1.0) * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc -= s * self.weights[k] * x[self.cols[k]];
            }
            out[i] = acc;
        }
    }

    fn power_iteration(&self) -> f64 {
        let n = self.n_nodes();
        // deterministic start with a component outside the constant null space
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0 - if i % 2 == 0 { 0.5 } else { 0.0 }).collect();
        let mut w = vec![0.0; n];
        let mut lambda = 0.0;
        for _ in 0..POWER_STEPS {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            self.laplacian_mul(&v, &mut w);
            lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            std::mem::swap(&mut v, &mut w);
        }
        lambda.max(1e-12)
    }

    fn count_components(&self) -> usize {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(i) = stack.pop() {
                for (j, _) in self.edges(i) {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }
}

/// Child lists linking a fine masked level to its coarsened parent mask.
#[derive(Debug, Clone)]
pub struct Pooling {
    children: Vec<Vec<usize>>,
    parent: Vec<usize>,
}

impl Pooling {
    /// `fine` nodes are the pixels of `fine_mask`; `coarse_mask` must be its
    /// coarsening, so every fine node has a parent node.
    pub fn new(fine_mask: &CapMask, coarse_mask: &CapMask) -> Result<Self> {
        if fine_mask.n_side() != 2 * coarse_mask.n_side() {
            return Err(Error::Shape("pooling needs consecutive resolutions".into()));
        }
        let cpos = coarse_mask.positions();
        let mut children = vec![Vec::new(); coarse_mask.len()];
        let mut parent = Vec::with_capacity(fine_mask.len());
        for (i, &p) in fine_mask.pixels().iter().enumerate() {
            let c = cpos[p / 4].ok_or_else(|| Error::Shape(format!("fine pixel {p} has no parent in the coarse mask")))?;
            children[c].push(i);
            parent.push(c);
        }
        if children.iter().any(|c| c.is_empty()) {
            return Err(Error::Shape("coarse node without children".into()));
        }
        Ok(Self { children, parent })
    }

    pub fn n_fine(&self) -> usize {
        self.parent.len()
    }

    pub fn n_coarse(&self) -> usize {
        self.children.len()
    }

    pub fn children(&self, c: usize) -> &[usize] {
        &self.children[c]
    }

    pub fn parent(&self, f: usize) -> usize {
        self.parent[f]
    }

    /// Mean over the masked children.
    pub fn pool(&self, x: &[f64]) -> Vec<f64> {
        self.children.iter().map(|ch| ch.iter().map(|&i| x[i]).sum::<f64>() / ch.len() as f64).collect()
    }

    /// Copy each parent value to its children.
    pub fn unpool(&self, x: &[f64]) -> Vec<f64> {
        self.parent.iter().map(|&c| x[c]).collect()
    }

    /// Adjoint of `pool`.
    pub fn pool_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_fine()];
        for (c, ch) in self.children.iter().enumerate() {
            let s = g[c] / ch.len() as f64;
            for &i in ch {
                out[i] = s;
            }
        }
        out
    }

    /// Adjoint of `unpool`.
    pub fn unpool_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_coarse()];
        for (i, &c) in self.parent.iter().enumerate() {
            out[c] += g[i];
        }
        out
    }
}
