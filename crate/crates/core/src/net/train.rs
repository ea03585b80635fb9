//! Unsupervised training of the U-Net against the reconstruction losses.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::unet::{NetParams, SphericalUNet};
use crate::error::{Error, Result};
use crate::estimation::{max_normalize, AtomSmoother, LossBreakdown, Objective};
use crate::forward::Fodf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, batch_size: 32, epochs: 15, weight_decay: 0.01, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self { learning_rate, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p -= self.learning_rate * (update + self.weight_decay * *p);
        }
    }
}

/// Loss and parameter gradient for one normalized signal.
pub fn sample_loss_and_gradient(
    net: &SphericalUNet,
    params: &NetParams,
    objective: &Objective,
    s: &[f64],
) -> Result<(LossBreakdown, Vec<f64>)> {
    let cache = net.forward_cached(params, s)?;
    let (loss, g_out) = objective.value_and_gradient(&cache.output, s)?;
    let grad = net.backward(params, &cache, &g_out)?;
    Ok((loss, grad))
}

/// Mean loss over a set of signals without updating anything.
pub fn evaluate_loss(net: &SphericalUNet, params: &NetParams, objective: &Objective, dataset: &[Vec<f64>]) -> Result<LossBreakdown> {
    let losses = dataset
        .par_iter()
        .map(|s| {
            let s = max_normalize(s);
            objective.value(&net.forward(params, &s)?, &s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_breakdown(&losses))
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let (mut r, mut s, mut nn) = (0.0, 0.0, 0.0);
    for b in items {
        r += b.l_r;
        s += b.l_s;
        nn += b.l_n;
    }
    LossBreakdown::new(r / n, s / n, nn / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: NetParams,
    /// Mean training loss of every epoch, accumulated over its batches.
    pub history: Vec<LossBreakdown>,
}

/// Minibatch AdamW over `dataset` (signals in finest-mask order). The shuffle
/// order derives from `config.seed`; per-sample gradients are reduced in
/// batch order, so results do not depend on the thread count.
pub fn train(
    net: &SphericalUNet,
    init: NetParams,
    dataset: &[Vec<f64>],
    objective: &Objective,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if objective.bank.n_atoms() != net.n_outputs() || objective.bank.n_rows() != net.n_inputs() {
        return Err(Error::Shape("kernel bank does not match the network".into()));
    }
    let data: Vec<Vec<f64>> = dataset.iter().map(|s| max_normalize(s)).collect();
    let mut params = init;
    let mut opt = AdamW::new(params.len(), config.learning_rate, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch_index = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::with_capacity(data.len());
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| sample_loss_and_gradient(net, &params, objective, &data[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; params.len()];
            for (loss, g) in &results {
                if !loss.l_total.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLoss { batch: batch_index });
                }
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
                epoch_losses.push(*loss);
            }
            let scale = 1.0 / results.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut params.values, &grad);
            batch_index += 1;
        }
        let mean = mean_breakdown(&epoch_losses);
        log::info!("epoch {epoch}: loss {:.6} (r {:.6} s {:.6} n {:.6})", mean.l_total, mean.l_r, mean.l_s, mean.l_n);
        history.push(mean);
    }
    Ok(TrainReport { params, history })
}

/// fODF predicted for one projected signal. The signed network output is
/// clamped to non-negative atom weights before smoothing.
pub fn predict_signal(net: &SphericalUNet, params: &NetParams, smoother: &AtomSmoother, s: &[f64]) -> Result<Fodf> {
    let w: Vec<f64> = net.forward(params, &max_normalize(s))?.into_iter().map(|v| v.max(0.0)).collect();
    Ok(smoother.fodf(&w))
}
