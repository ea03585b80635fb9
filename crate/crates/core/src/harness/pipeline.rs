//! Configured measurement model: grids, mask, kernel bank and smoother.

use std::path::Path;

use crate::error::Result;
use crate::estimation::{max_normalize, solve_direct, AtomSmoother, Objective, SolveResult};
use crate::forward::{AtomSet, Fodf, KernelBank};
use crate::healpix::{CapMask, GridResolution, HealpixGrid};
use crate::net::{predict_signal, NetParams, SphericalUNet};
use crate::projection::{find_centroid, project_to_sphere, PatternCentroid, ScatteringPattern};

use super::config::Config;

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: Config,
    pub grid: HealpixGrid,
    pub mask: CapMask,
    pub atoms: AtomSet,
    pub bank: KernelBank,
    pub smoother: AtomSmoother,
}

impl Pipeline {
    pub fn new(config: &Config) -> Result<Self> {
        Self::build(config, None)
    }

    /// As `new`, reusing or refreshing a kernel-bank cache file.
    pub fn with_cache(config: &Config, cache: &Path) -> Result<Self> {
        Self::build(config, Some(cache))
    }

    fn build(config: &Config, cache: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let grid = HealpixGrid::new(GridResolution::new(config.n_side_input)?);
        let mask = CapMask::annulus(&grid, config.theta_min(), config.theta_max())?;
        let atoms = AtomSet::new(GridResolution::new(config.n_side_fodf)?);
        let params = config.kernel_params();
        let bank = match cache {
            Some(path) => KernelBank::load_or_build(path, atoms.directions(), &params, &grid, &mask)?,
            None => KernelBank::build(atoms.directions(), &params, &grid, &mask)?,
        };
        let smoother = AtomSmoother::new(&atoms, config.l_max)?;
        Ok(Self { config: config.clone(), grid, mask, atoms, bank, smoother })
    }

    pub fn objective(&self) -> Objective<'_> {
        let mut o = Objective::new(&self.bank, &self.smoother, self.config.loss_weights());
        o.sparsity_on_smoothed = self.config.sparsity_on_smoothed;
        o
    }

    /// Centroid of a pattern; a constant pattern falls back to the raster centre.
    pub fn centroid(&self, pattern: &ScatteringPattern) -> PatternCentroid {
        find_centroid(pattern, self.config.centroid_sigma).unwrap_or_else(|e| {
            log::warn!("{e}; using the geometric centre");
            PatternCentroid::geometric(pattern)
        })
    }

    /// Projected, max-normalized signal in mask order.
    pub fn project(&self, pattern: &ScatteringPattern) -> Result<Vec<f64>> {
        let centroid = self.centroid(pattern);
        let input = if self.config.normalize_input { pattern.max_normalized() } else { pattern.clone() };
        let (signal, _) = project_to_sphere(&input, centroid, &self.config.geometry(), &self.grid, &self.mask)?;
        Ok(max_normalize(&signal.gather(&self.mask)?))
    }

    pub fn fit(&self, pattern: &ScatteringPattern) -> Result<SolveResult> {
        let s = self.project(pattern)?;
        solve_direct(&s, &self.objective(), &self.config.solve_options())
    }

    /// Untrained network matching this pipeline's mask and atoms.
    pub fn network(&self) -> Result<SphericalUNet> {
        SphericalUNet::new(&self.grid, &self.mask, self.atoms.len(), self.config.unet_config())
    }

    /// Centroid, projection, network and SH smoothing for one pattern.
    pub fn predict(&self, net: &SphericalUNet, params: &NetParams, pattern: &ScatteringPattern) -> Result<Fodf> {
        predict_signal(net, params, &self.smoother, &self.project(pattern)?)
    }
}
