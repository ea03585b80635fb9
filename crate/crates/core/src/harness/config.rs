//! Flat `key = value` configuration with defaults for every parameter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{LossWeights, SolveOptions};
use crate::forward::EllipsoidKernelParams;
use crate::net::{TrainConfig, UNetConfig};
use crate::projection::MicroscopeGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // geometry
    pub h_cm: f64,
    pub l_cm: f64,
    pub r_led_mm: f64,
    pub d_mm: f64,
    pub normalize_input: bool,
    pub centroid_sigma: f64,
    // grids
    pub n_side_input: u32,
    pub theta_max_deg: f64,
    pub theta_min_deg: f64,
    pub n_side_fodf: u32,
    pub l_max: usize,
    // kernel
    pub alpha: f64,
    pub softness: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub center_z: f64,
    pub normalize_kernel: bool,
    // losses
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub sigma_s: f64,
    pub sparsity_on_smoothed: bool,
    // direct solver
    pub max_iters: usize,
    pub step: f64,
    pub tol: f64,
    // network
    pub cheb_order: usize,
    pub widths: Vec<usize>,
    pub leaky_slope: f64,
    /// Edge kernel width; 0 selects the mean neighbour chord length.
    pub rho: f64,
    // training
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    // synthetic data
    pub synth_count: usize,
    pub min_fibres: usize,
    pub max_fibres: usize,
    pub noise: f64,
    pub max_elevation_deg: f64,
    pub beam_amplitude: f64,
    pub beam_sigma: f64,
    pub width: usize,
    pub height: usize,
    // evaluation
    pub n_bins: usize,
    pub min_prominence: f64,
    pub top_k: usize,
    pub min_separation_deg: f64,
    pub peak_threshold: f64,
    /// Worker threads for per-pattern commands; 0 uses all cores.
    pub workers: usize,
}

impl Default for Config {
    fn default() -> Self {
        let g = MicroscopeGeometry::default();
        let k = EllipsoidKernelParams::default();
        let l = LossWeights::default();
        let s = SolveOptions::default();
        Self {
            h_cm: g.h_cm,
            l_cm: g.l_cm,
            r_led_mm: g.r_led_mm,
            d_mm: g.d_mm,
            normalize_input: false,
            centroid_sigma: 2.0,
            n_side_input: 16,
            theta_max_deg: 60.0,
            theta_min_deg: 10.0,
            n_side_fodf: 4,
            l_max: 8,
            alpha: k.alpha,
            softness: k.softness,
            center_x: 0.0,
            center_y: 0.0,
            center_z: 0.0,
            normalize_kernel: k.normalize,
            lambda_r: l.lambda_r,
            lambda_s: l.lambda_s,
            sigma_s: l.sigma_s,
            sparsity_on_smoothed: true,
            max_iters: s.max_iters,
            step: s.step,
            tol: s.tol,
            cheb_order: 5,
            widths: vec![16, 32, 64],
            leaky_slope: 0.1,
            rho: 0.0,
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 15,
            weight_decay: 0.01,
            seed: 0,
            synth_count: 1024,
            min_fibres: 1,
            max_fibres: 3,
            noise: 0.02,
            max_elevation_deg: 50.0,
            beam_amplitude: 20.0,
            beam_sigma: 1.0,
            width: 81,
            height: 81,
            n_bins: 72,
            min_prominence: 0.1,
            top_k: 3,
            min_separation_deg: 20.0,
            peak_threshold: 0.1,
            workers: 0,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        format!("# slifodf configuration; every key is optional\n{body}")
    }

    pub fn geometry(&self) -> MicroscopeGeometry {
        MicroscopeGeometry { h_cm: self.h_cm, l_cm: self.l_cm, r_led_mm: self.r_led_mm, d_mm: self.d_mm }
    }

    pub fn kernel_params(&self) -> EllipsoidKernelParams {
        EllipsoidKernelParams {
            alpha: self.alpha,
            softness: self.softness,
            center: [self.center_x, self.center_y, self.center_z],
            normalize: self.normalize_kernel,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda_r: self.lambda_r, lambda_s: self.lambda_s, sigma_s: self.sigma_s }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { max_iters: self.max_iters, step: self.step, tol: self.tol }
    }

    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            widths: self.widths.clone(),
            order: self.cheb_order,
            leaky_slope: self.leaky_slope,
            rho: if self.rho > 0.0 { Some(self.rho) } else { None },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            weight_decay: self.weight_decay,
            seed: self.seed,
        }
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max_deg.to_radians()
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min_deg.to_radians()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.geometry().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.kernel_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.loss_weights().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.solve_options().validate().map_err(|e| Error::Config(e.to_string()))?;
        for n in [self.n_side_input, self.n_side_fodf] {
            if n == 0 || !n.is_power_of_two() {
                return bad("grid resolutions must be powers of two");
            }
        }
        if !self.l_max.is_multiple_of(2) {
            return bad("l_max must be even");
        }
        if !(self.theta_min_deg >= 0.0 && self.theta_min_deg < self.theta_max_deg && self.theta_max_deg < 90.0) {
            return bad("need 0 <= theta_min_deg < theta_max_deg < 90");
        }
        if self.widths.is_empty() || self.widths.contains(&0) || self.cheb_order == 0 {
            return bad("network widths and cheb_order must be positive");
        }
        if self.n_side_input >> (self.widths.len() - 1) == 0 {
            return bad("too many network levels for n_side_input");
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 || self.weight_decay < 0.0 {
            return bad("learning_rate, batch_size and epochs must be positive");
        }
        if self.min_fibres > self.max_fibres || self.max_fibres > 3 {
            return bad("fibre count range must lie within 0..=3");
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1)");
        }
        if self.width == 0 || self.height == 0 || self.n_bins < 8 {
            return bad("raster size must be positive and n_bins >= 8");
        }
        Ok(())
    }
}
