//! Chebyshev graph convolution, leaky rectifier and dense readout, each with
//! forward and backward passes. Features are `n_nodes × channels` matrices.

use nalgebra::DMatrix;

use super::graph::SphereGraph;
use crate::error::{Error, Result};

/// Shape of one Chebyshev convolution. Coefficients are stored row-major as
/// `[(k * c_in + i) * c_out + o]`, followed by `c_out` biases; the effective
/// coefficients are the stored ones times `gain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebLayer {
    pub order: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub gain: f64,
}

impl ChebLayer {
    pub fn new(order: usize, c_in: usize, c_out: usize) -> Result<Self> {
        if order == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::InvalidInput(format!("Chebyshev layer K={order} {c_in}->{c_out}")));
        }
        Ok(Self { order, c_in, c_out, gain: 1.0 })
    }

    /// Same shape with coefficients scaled by `sqrt(2 / (K c_in))`, so that
    /// unit-variance stored values give He-scaled filters.
    pub fn scaled(order: usize, c_in: usize, c_out: usize) -> Result<Self> {
        let mut l = Self::new(order, c_in, c_out)?;
        l.gain = (2.0 / (order * c_in) as f64).sqrt();
        Ok(l)
    }

    pub fn n_theta(&self) -> usize {
        self.order * self.c_in * self.c_out
    }

    pub fn n_params(&self) -> usize {
        self.n_theta() + self.c_out
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.n_theta())
    }
}

/// `out[:, c] = L~ x[:, c]` for every column.
pub fn scaled_laplacian_apply(graph: &SphereGraph, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for c in 0..x.ncols() {
        graph.scaled_mul(x.column(c).as_slice(), out.column_mut(c).as_mut_slice());
    }
    out
}

/// Chebyshev basis `[T_0 x, T_1 x, ..., T_{K-1} x]` stacked by columns.
pub fn chebyshev_basis(graph: &SphereGraph, x: &DMatrix<f64>, order: usize) -> DMatrix<f64> {
    let (n, c) = (x.nrows(), x.ncols());
    let mut t = DMatrix::zeros(n, order * c);
    t.columns_mut(0, c).copy_from(x);
    if order > 1 {
        let t1 = scaled_laplacian_apply(graph, x);
        t.columns_mut(c, c).copy_from(&t1);
    }
    for k in 2..order {
        let prev = t.columns(c * (k - 1), c).into_owned();
        let lp = scaled_laplacian_apply(graph, &prev);
        let prev2 = t.columns(c * (k - 2), c).into_owned();
        t.columns_mut(c * k, c).copy_from(&(lp * 2.0 - prev2));
    }
    t
}

fn check_shape(graph: &SphereGraph, x: &DMatrix<f64>, channels: usize) -> Result<()> {
    if x.nrows() != graph.n_nodes() || x.ncols() != channels {
        return Err(Error::Shape(format!(
            "features {}x{} for a graph of {} nodes and {} channels",
            x.nrows(),
            x.ncols(),
            graph.n_nodes(),
            channels
        )));
    }
    Ok(())
}

/// `y = sum_k T_k(L~) x Theta_k + bias`. Returns `y` and the Chebyshev basis
/// needed by the backward pass.
pub fn cheb_conv(graph: &SphereGraph, x: &DMatrix<f64>, layer: &ChebLayer, params: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_shape(graph, x, layer.c_in)?;
    if params.len() != layer.n_params() {
        return Err(Error::Shape(format!("{} parameters for a layer of {}", params.len(), layer.n_params())));
    }
    let (theta, bias) = layer.split(params);
    let t = chebyshev_basis(graph, x, layer.order);
    let th = DMatrix::from_row_slice(layer.order * layer.c_in, layer.c_out, theta) * layer.gain;
    let mut y = &t * th;
    for (o, b) in bias.iter().enumerate() {
        y.column_mut(o).add_scalar_mut(*b);
    }
    Ok((y, t))
}

/// Backward pass of `cheb_conv`: accumulates parameter gradients into
/// `grad` and returns the gradient with respect to `x`.
pub fn cheb_conv_backward(
    graph: &SphereGraph,
    basis: &DMatrix<f64>,
    dy: &DMatrix<f64>,
    layer: &ChebLayer,
    params: &[f64],
    grad: &mut [f64],
) -> DMatrix<f64> {
    let (theta, _) = layer.split(params);
    let (k_order, c) = (layer.order, layer.c_in);
    let d_theta = basis.transpose() * dy * layer.gain;
    let (g_theta, g_bias) = grad.split_at_mut(layer.n_theta());
    for r in 0..k_order * c {
        for o in 0..layer.c_out {
            g_theta[r * layer.c_out + o] += d_theta[(r, o)];
        }
    }
    for (o, g) in g_bias.iter_mut().enumerate() {
        *g += dy.column(o).sum();
    }
    let th = DMatrix::from_row_slice(k_order * c, layer.c_out, theta) * layer.gain;
    let mut dt = dy * th.transpose();
    // reverse the recurrence T_k = 2 L~ T_{k-1} - T_{k-2}
    for k in (2..k_order).rev() {
        let gk = dt.columns(c * k, c).into_owned();
        let lg = scaled_laplacian_apply(graph, &gk) * 2.0;
        let mut prev = dt.columns_mut(c * (k - 1), c);
        prev += lg;
        let mut prev2 = dt.columns_mut(c * (k - 2), c);
        prev2 -= gk;
    }
    let mut dx = dt.columns(0, c).into_owned();
    if k_order > 1 {
        dx += scaled_laplacian_apply(graph, &dt.columns(c, c).into_owned());
    }
    dx
}

pub fn leaky_relu(z: &DMatrix<f64>, slope: f64) -> DMatrix<f64> {
    z.map(|v| if v >= 0.0 { v } else { slope * v })
}

/// Gradient through the leaky rectifier given its pre-activation.
pub fn leaky_relu_backward(z: &DMatrix<f64>, dy: &DMatrix<f64>, slope: f64) -> DMatrix<f64> {
    z.zip_map(dy, |v, g| if v >= 0.0 { g } else { slope * g })
}

/// Fully connected map from `n_in` node values to `n_out` outputs. Weights are
/// row-major `[i * n_out + o]` and multiplied by `gain`, followed by `n_out`
/// biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub gain: f64,
}

impl DenseLayer {
    pub fn n_params(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }

    pub fn forward(&self, x: &[f64], params: &[f64]) -> Vec<f64> {
        let (w, b) = params.split_at(self.n_in * self.n_out);
        let mut y = b.to_vec();
        for (i, &xi) in x.iter().enumerate() {
            let xi = xi * self.gain;
            if xi == 0.0 {
                continue;
            }
            let row = &w[i * self.n_out..(i + 1) * self.n_out];
            for (yo, wo) in y.iter_mut().zip(row) {
                *yo += xi * wo;
            }
        }
        y
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], params: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (w, _) = params.split_at(self.n_in * self.n_out);
        let (gw, gb) = grad.split_at_mut(self.n_in * self.n_out);
        for (g, d) in gb.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; self.n_in];
        for (i, &xi) in x.iter().enumerate() {
            let row = &w[i * self.n_out..(i + 1) * self.n_out];
            let grow = &mut gw[i * self.n_out..(i + 1) * self.n_out];
            let mut acc = 0.0;
            for o in 0..self.n_out {
                grow[o] += self.gain * xi * dy[o];
                acc += row[o] * dy[o];
            }
            dx[i] = self.gain * acc;
        }
        dx
    }
}
