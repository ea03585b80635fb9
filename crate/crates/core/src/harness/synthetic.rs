//! Synthetic scattering patterns with known fibre configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{band_value, fibre_kernel, FibreOrientation};
use crate::healpix::ang2vec;
use crate::projection::{inverse_gnomonic, PatternCentroid, ScatteringPattern};
use crate::sh::{real_sh, ShCoeffs};
use crate::signal::SphericalSignal;

use super::pipeline::Pipeline;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FibreSpec {
    pub orientation: FibreOrientation,
    pub weight: f64,
}

/// Ground truth of one synthetic pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub fibres: Vec<FibreSpec>,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Spec with weights rescaled to sum to one.
    pub fn new(fibres: Vec<FibreSpec>, noise: f64, seed: u64) -> Result<Self> {
        if fibres.len() > 3 {
            return Err(Error::InvalidInput(format!("{} fibres; at most 3 are supported", fibres.len())));
        }
        if fibres.iter().any(|f| !(f.weight > 0.0)) {
            return Err(Error::InvalidInput("fibre weights must be positive".into()));
        }
        if !(0.0..1.0).contains(&noise) {
            return Err(Error::InvalidInput(format!("noise {noise} outside [0, 1)")));
        }
        let total: f64 = fibres.iter().map(|f| f.weight).sum();
        let fibres = fibres.into_iter().map(|f| FibreSpec { weight: f.weight / total, ..f }).collect();
        Ok(Self { fibres, noise, seed })
    }

    /// Even-degree SH coefficients of the antipodally symmetric sum of deltas.
    pub fn sh_coeffs(&self, l_max: usize) -> ShCoeffs {
        let mut c = vec![0.0; crate::sh::n_coeffs(l_max)];
        for f in &self.fibres {
            let (t, p) = crate::forward::axis_angles(f.orientation.axis());
            for (ci, y) in c.iter_mut().zip(real_sh(l_max, t, p)) {
                *ci += f.weight * y;
            }
        }
        ShCoeffs::new(l_max, c).expect("finite")
    }
}

/// Decorrelated per-pattern seed (splitmix64 of the pair).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Minimum axial separation between fibres of a random spec.
pub const MIN_FIBRE_SEPARATION_DEG: f64 = 30.0;

/// Random 1..=3 fibre configuration following the config ranges.
pub fn random_spec(pipeline: &Pipeline, seed: u64) -> SyntheticSpec {
    let cfg = &pipeline.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(cfg.min_fibres..=cfg.max_fibres);
    let max_elev = cfg.max_elevation_deg.to_radians();
    let mut fibres: Vec<FibreSpec> = Vec::new();
    while fibres.len() < count {
        let o = FibreOrientation::new(rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..=max_elev))
            .expect("finite");
        let a = o.axis();
        let separated = fibres.iter().all(|f| {
            let b = f.orientation.axis();
            let c = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs().min(1.0);
            c.acos() >= MIN_FIBRE_SEPARATION_DEG.to_radians()
        });
        if separated {
            fibres.push(FibreSpec { orientation: o, weight: rng.random_range(0.3..1.0) });
        }
    }
    SyntheticSpec::new(fibres, cfg.noise, seed).expect("valid spec")
}

/// Two in-plane fibres at `phi` and `phi + 90 deg` with equal weights.
pub fn crossing_spec(phi: f64, noise: f64, seed: u64) -> SyntheticSpec {
    let a = FibreOrientation::new(phi, 0.0).expect("finite");
    let b = FibreOrientation::new(phi + std::f64::consts::FRAC_PI_2, 0.0).expect("finite");
    SyntheticSpec::new(
        vec![FibreSpec { orientation: a, weight: 1.0 }, FibreSpec { orientation: b, weight: 1.0 }],
        noise,
        seed,
    )
    .expect("valid spec")
}

/// Render a spec into a raster and its clean masked signal.
///
/// The raster is the kernel mixture evaluated analytically at each raster
/// pixel's incidence direction, plus an unscattered beam spot at the raster
/// centre and relative Gaussian noise (clamped at zero). The returned
/// signal is the noiseless mixture on the pipeline mask.
pub fn generate_synthetic(spec: &SyntheticSpec, pipeline: &Pipeline) -> Result<(ScatteringPattern, SphericalSignal)> {
    let cfg = &pipeline.config;
    let params = cfg.kernel_params();
    let geometry = cfg.geometry();
    let mut masked = vec![0.0; pipeline.mask.len()];
    let mut kernels = Vec::with_capacity(spec.fibres.len());
    for f in &spec.fibres {
        let k = fibre_kernel(f.orientation, &params, &pipeline.grid, &pipeline.mask)?;
        let vals = k.signal.gather(&pipeline.mask)?;
        for (m, v) in masked.iter_mut().zip(vals) {
            *m += f.weight * v;
        }
        kernels.push(k);
    }
    let signal = SphericalSignal::from_masked(&pipeline.mask, &masked)?;

    let (w, h) = (cfg.width, cfg.height);
    let centre = PatternCentroid { x: (w - 1) as f64 / 2.0, y: (h - 1) as f64 / 2.0 };
    let mut data = vec![0.0; w * h];
    if !spec.fibres.is_empty() {
        for (i, out) in data.iter_mut().enumerate() {
            let (dx, dy) = ((i % w) as f64 - centre.x, (i / w) as f64 - centre.y);
            let (t, p) = inverse_gnomonic(dx, dy, &geometry);
            let v = ang2vec(t, p);
            let mut s = 0.0;
            for (f, k) in spec.fibres.iter().zip(&kernels) {
                s += f.weight * band_value(v, &f.orientation, &params) / k.scale;
            }
            let r2 = dx * dx + dy * dy;
            *out = s + cfg.beam_amplitude * (-r2 / (2.0 * cfg.beam_sigma * cfg.beam_sigma)).exp();
        }
        if spec.noise > 0.0 {
            let peak = masked.iter().cloned().fold(0.0, f64::max);
            let normal = Normal::new(0.0, spec.noise * peak).map_err(|e| Error::InvalidInput(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
            for v in data.iter_mut() {
                *v = (*v + normal.sample(&mut rng)).max(0.0);
            }
        }
    }
    Ok((ScatteringPattern::new(w, h, data)?, signal))
}
