//! Spherical U-Net on a masked HEALPix hierarchy with a dense fODF readout.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Pooling, SphereGraph};
use super::layers::{cheb_conv, cheb_conv_backward, leaky_relu, leaky_relu_backward, ChebLayer, DenseLayer};
use crate::error::{Error, Result};
use crate::forward::ByteReader;
use crate::healpix::{CapMask, HealpixGrid};
use crate::signal::SphericalSignal;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SLNP";
const CHECKPOINT_VERSION: u16 = 1;
const INIT_DENSE_STD: f64 = 0.1;

/// Hyperparameters fixing the network shape.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    /// Channel width per level, finest first; its length is the level count.
    pub widths: Vec<usize>,
    pub order: usize,
    pub leaky_slope: f64,
    /// Edge kernel width; `None` uses the mean neighbour chord per level.
    pub rho: Option<f64>,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { widths: vec![16, 32, 64], order: 5, leaky_slope: 0.1, rho: None }
    }
}

/// All trainable parameters as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub values: Vec<f64>,
}

impl NetParams {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Level {
    graph: SphereGraph,
    mask: CapMask,
}

/// Network structure: graphs per level, pooling maps and parameter layout.
#[derive(Debug, Clone)]
pub struct SphericalUNet {
    config: UNetConfig,
    levels: Vec<Level>,
    pools: Vec<Pooling>,
    // convolutions in execution order with their parameter offsets
    convs: Vec<(usize, ChebLayer, usize)>,
    head: (ChebLayer, usize),
    dense: (DenseLayer, usize),
    n_params: usize,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    convs: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    head_basis: DMatrix<f64>,
    head_out: Vec<f64>,
    pub output: Vec<f64>,
}

impl SphericalUNet {
    /// Network on `mask` (finest level) producing `n_out` raw atom weights.
    pub fn new(grid: &HealpixGrid, mask: &CapMask, n_out: usize, config: UNetConfig) -> Result<Self> {
        let n_levels = config.widths.len();
        if n_levels == 0 || config.widths.contains(&0) || config.order == 0 || n_out == 0 {
            return Err(Error::InvalidInput("network needs positive widths, order and outputs".into()));
        }
        if !config.leaky_slope.is_finite() {
            return Err(Error::InvalidInput("leaky slope must be finite".into()));
        }
        let mut levels = Vec::with_capacity(n_levels);
        let mut pools = Vec::new();
        let mut g = grid.clone();
        let mut m = mask.clone();
        for l in 0..n_levels {
            if l > 0 {
                let coarse = m.coarsen()?;
                g = HealpixGrid::with_n_side(coarse.n_side())?;
                pools.push(Pooling::new(&m, &coarse)?);
                m = coarse;
            }
            let graph = SphereGraph::build(&g, &m, config.rho)?;
            levels.push(Level { graph, mask: m.clone() });
        }

        let w = &config.widths;
        let k = config.order;
        let mut offset = 0;
        let mut convs = Vec::new();
        let mut push = |level: usize, c_in: usize, c_out: usize, offset: &mut usize| -> Result<()> {
            let layer = ChebLayer::scaled(k, c_in, c_out)?;
            convs.push((level, layer, *offset));
            *offset += layer.n_params();
            Ok(())
        };
        for l in 0..n_levels {
            let c_in = if l == 0 { 1 } else { w[l - 1] };
            push(l, c_in, w[l], &mut offset)?;
            push(l, w[l], w[l], &mut offset)?;
        }
        for l in (0..n_levels - 1).rev() {
            push(l, w[l + 1] + w[l], w[l], &mut offset)?;
            push(l, w[l], w[l], &mut offset)?;
        }
        let head = (ChebLayer::scaled(1, w[0], 1)?, offset);
        offset += head.0.n_params();
        let n_in = levels[0].graph.n_nodes();
        let dense = (DenseLayer { n_in, n_out, gain: 1.0 / n_in as f64 }, offset);
        offset += dense.0.n_params();
        Ok(Self { config, levels, pools, convs, head, dense, n_params: offset })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_inputs(&self) -> usize {
        self.levels[0].graph.n_nodes()
    }

    pub fn n_outputs(&self) -> usize {
        self.dense.0.n_out
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn graph(&self, level: usize) -> &SphereGraph {
        &self.levels[level].graph
    }

    pub fn mask(&self, level: usize) -> &CapMask {
        &self.levels[level].mask
    }

    pub fn pooling(&self, level: usize) -> &Pooling {
        &self.pools[level]
    }

    /// Resolution of each level, finest first.
    pub fn n_side_chain(&self) -> Vec<u32> {
        self.levels.iter().map(|l| l.mask.n_side()).collect()
    }

    /// Random initialization: unit normal stored coefficients (the layer
    /// gains provide the scaling), zero biases.
    pub fn init_params(&self, seed: u64) -> NetParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = NetParams::zeros(self.n_params);
        let mut fill = |slice: &mut [f64], std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in slice {
                *v = normal.sample(&mut rng);
            }
        };
        for &(_, layer, off) in self.convs.iter().chain(std::iter::once(&(0, self.head.0, self.head.1))) {
            fill(&mut p.values[off..off + layer.n_theta()], 1.0);
        }
        let (d, off) = self.dense;
        fill(&mut p.values[off..off + d.n_in * d.n_out], INIT_DENSE_STD);
        p
    }

    fn check_params(&self, params: &NetParams) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::Shape(format!("{} parameters for a network of {}", params.len(), self.n_params)));
        }
        Ok(())
    }

    /// Raw atom weights for one signal given in finest-mask order.
    pub fn forward(&self, params: &NetParams, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(params, input)?.output)
    }

    /// As `forward`, for a signal on the full input grid.
    pub fn forward_signal(&self, params: &NetParams, signal: &SphericalSignal) -> Result<Vec<f64>> {
        let mask = &self.levels[0].mask;
        if signal.n_side() != mask.n_side() {
            return Err(Error::Shape(format!("signal n_side {} for a network at n_side {}", signal.n_side(), mask.n_side())));
        }
        self.forward(params, &signal.gather(mask)?)
    }

    fn conv_act(&self, idx: usize, params: &NetParams, x: &DMatrix<f64>, cache: &mut Vec<(DMatrix<f64>, DMatrix<f64>)>) -> Result<DMatrix<f64>> {
        let (level, layer, off) = self.convs[idx];
        let (z, basis) = cheb_conv(&self.levels[level].graph, x, &layer, &params.values[off..off + layer.n_params()])?;
        let y = leaky_relu(&z, self.config.leaky_slope);
        cache.push((basis, z));
        Ok(y)
    }

    pub fn forward_cached(&self, params: &NetParams, input: &[f64]) -> Result<ForwardCache> {
        self.check_params(params)?;
        if input.len() != self.n_inputs() {
            return Err(Error::Shape(format!("{} inputs for a network of {}", input.len(), self.n_inputs())));
        }
        let n_levels = self.levels.len();
        let mut cache = Vec::with_capacity(self.convs.len());
        let mut x = DMatrix::from_column_slice(input.len(), 1, input);
        let mut skips = Vec::with_capacity(n_levels);
        let mut idx = 0;
        for l in 0..n_levels {
            if l > 0 {
                x = map_columns(&x, |c| self.pools[l - 1].pool(c));
            }
            for _ in 0..2 {
                x = self.conv_act(idx, params, &x, &mut cache)?;
                idx += 1;
            }
            if l + 1 < n_levels {
                skips.push(x.clone());
            }
        }
        for l in (0..n_levels - 1).rev() {
            let up = map_columns(&x, |c| self.pools[l].unpool(c));
            let skip = &skips[l];
            let mut cat = DMatrix::zeros(up.nrows(), up.ncols() + skip.ncols());
            cat.columns_mut(0, up.ncols()).copy_from(&up);
            cat.columns_mut(up.ncols(), skip.ncols()).copy_from(skip);
            x = cat;
            for _ in 0..2 {
                x = self.conv_act(idx, params, &x, &mut cache)?;
                idx += 1;
            }
        }
        let (hl, hoff) = self.head;
        let (h, head_basis) = cheb_conv(&self.levels[0].graph, &x, &hl, &params.values[hoff..hoff + hl.n_params()])?;
        let head_out: Vec<f64> = h.column(0).iter().copied().collect();
        let (d, doff) = self.dense;
        let output = d.forward(&head_out, &params.values[doff..doff + d.n_params()]);
        Ok(ForwardCache { convs: cache, head_basis, head_out, output })
    }

    /// Parameter gradient given the gradient of a scalar loss with respect to
    /// the output of the forward pass recorded in `cache`.
    pub fn backward(&self, params: &NetParams, cache: &ForwardCache, d_out: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if d_out.len() != self.n_outputs() {
            return Err(Error::Shape(format!("{} output gradients for {} outputs", d_out.len(), self.n_outputs())));
        }
        let mut grad = vec![0.0; self.n_params];
        let pv = &params.values;
        let (d, doff) = self.dense;
        let dh = d.backward(&cache.head_out, d_out, &pv[doff..doff + d.n_params()], &mut grad[doff..doff + d.n_params()]);
        let (hl, hoff) = self.head;
        let mut dx = cheb_conv_backward(
            &self.levels[0].graph,
            &cache.head_basis,
            &DMatrix::from_column_slice(dh.len(), 1, &dh),
            &hl,
            &pv[hoff..hoff + hl.n_params()],
            &mut grad[hoff..hoff + hl.n_params()],
        );

        let n_levels = self.levels.len();
        let mut idx = self.convs.len();
        let conv_back = |dx: DMatrix<f64>, idx: usize, grad: &mut [f64]| {
            let (level, layer, off) = self.convs[idx];
            let (basis, z) = &cache.convs[idx];
            let dz = leaky_relu_backward(z, &dx, self.config.leaky_slope);
            cheb_conv_backward(&self.levels[level].graph, basis, &dz, &layer, &pv[off..off + layer.n_params()], &mut grad[off..off + layer.n_params()])
        };
        let mut d_skips: Vec<Option<DMatrix<f64>>> = vec![None; n_levels];
        for (l, d_skip) in d_skips.iter_mut().enumerate().take(n_levels - 1) {
            for _ in 0..2 {
                idx -= 1;
                dx = conv_back(dx, idx, &mut grad);
            }
            let up_c = self.config.widths[l + 1];
            *d_skip = Some(dx.columns(up_c, dx.ncols() - up_c).into_owned());
            let d_up = dx.columns(0, up_c).into_owned();
            dx = map_columns(&d_up, |c| self.pools[l].unpool_adjoint(c));
        }
        for l in (0..n_levels).rev() {
            if let Some(s) = d_skips[l].take() {
                dx += s;
            }
            for _ in 0..2 {
                idx -= 1;
                dx = conv_back(dx, idx, &mut grad);
            }
            if l > 0 {
                dx = map_columns(&dx, |c| self.pools[l - 1].pool_adjoint(c));
            }
        }
        debug_assert_eq!(idx, 0);
        Ok(grad)
    }

    fn header_fields(&self) -> Vec<u64> {
        let mut f = vec![self.levels.len() as u64];
        f.extend(self.n_side_chain().iter().map(|&n| n as u64));
        f.extend(self.config.widths.iter().map(|&w| w as u64));
        f.push(self.config.order as u64);
        f.extend(self.levels.iter().map(|l| l.graph.n_nodes() as u64));
        f.push(self.n_outputs() as u64);
        f.push(self.config.leaky_slope.to_bits());
        f.extend(self.levels.iter().map(|l| l.graph.rho().to_bits()));
        f.push(self.n_params as u64);
        f
    }

    /// FNV-1a hash of the architecture fields stored in checkpoints.
    pub fn architecture_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.header_fields() {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn write_checkpoint(&self, params: &NetParams, path: &Path) -> Result<()> {
        self.check_params(params)?;
        let mut buf = Vec::with_capacity(64 + 8 * params.len());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.architecture_hash().to_le_bytes());
        buf.extend_from_slice(&(self.levels.len() as u32).to_le_bytes());
        for n in self.n_side_chain() {
            buf.extend_from_slice(&n.to_le_bytes());
        }
        for &w in &self.config.widths {
            buf.extend_from_slice(&(w as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.config.order as u32).to_le_bytes());
        buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for v in &params.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    /// Read parameters saved for this exact architecture.
    pub fn read_checkpoint(&self, path: &Path) -> Result<NetParams> {
        let bytes = fs::read(path)?;
        let mut r = ByteReader { bytes: &bytes, pos: 0 };
        let mismatch = |what: &str| Error::Format(format!("checkpoint: {what} does not match the network"));
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("checkpoint: bad magic".into()));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint: unsupported version {version}")));
        }
        if r.u64()? != self.architecture_hash() {
            return Err(mismatch("architecture hash"));
        }
        if r.u32()? as usize != self.levels.len() {
            return Err(mismatch("level count"));
        }
        for n in self.n_side_chain() {
            if r.u32()? != n {
                return Err(mismatch("n_side chain"));
            }
        }
        for &w in &self.config.widths {
            if r.u32()? as usize != w {
                return Err(mismatch("channel widths"));
            }
        }
        if r.u32()? as usize != self.config.order {
            return Err(mismatch("Chebyshev order"));
        }
        if r.u64()? as usize != self.n_params {
            return Err(mismatch("parameter count"));
        }
        let values = (0..self.n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.finish("checkpoint")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("checkpoint: non-finite parameter".into()));
        }
        Ok(NetParams { values })
    }
}

fn map_columns(x: &DMatrix<f64>, f: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = (0..x.ncols()).map(|c| f(x.column(c).as_slice())).collect();
    let n = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, x.ncols(), |i, c| cols[c][i])
}
