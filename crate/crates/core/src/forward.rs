//! Ellipsoid band model of single-fibre scattering and kernel mixtures.
//!
//! A fibre with azimuth `phi_f` and elevation `theta_f` has the rotation
//! `R = R_y(theta_f) R_z(phi_f)` and axis `f = R^T e_x`. The measurement
//! direction `v` is scored by the quadric
//! `Q(v) = (v - x_c)^T R^T diag(alpha, 1, 1) R (v - x_c)` and the kernel is
//! the soft shell `exp(-(Q - 1)^2 / (2 sigma^2))`, a band around the great
//! circle perpendicular to the fibre.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::healpix::{vec2ang, CapMask, GridResolution, HealpixGrid};
use crate::sh::ShCoeffs;
use crate::signal::SphericalSignal;

const DEGENERATE: f64 = 1e-6;

/// Fibre direction. `phi` is the azimuth of the rotation, `theta` the
/// elevation of the axis out of the section plane, in `[0, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FibreOrientation {
    pub phi: f64,
    pub theta: f64,
}

impl FibreOrientation {
    /// Canonical orientation: `theta` in `[0, pi/2]`, `phi` in `[0, 2pi)`,
    /// reduced to `[0, pi)` for in-plane fibres.
    pub fn new(phi: f64, theta: f64) -> Result<Self> {
        if !phi.is_finite() || !theta.is_finite() {
            return Err(Error::InvalidAngle { theta, phi });
        }
        let (s, c) = (theta.sin(), theta.cos());
        let (sp, cp) = phi.sin_cos();
        Ok(Self::from_axis([c * cp, -c * sp, s]))
    }

    pub fn from_axis(v: [f64; 3]) -> Self {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let mut u = [v[0] / n, v[1] / n, v[2] / n];
        if u[2] < 0.0 {
            u = [-u[0], -u[1], -u[2]];
        }
        let theta = u[2].clamp(-1.0, 1.0).asin();
        let mut phi = (-u[1]).atan2(u[0]);
        let in_plane = u[2].abs() < 1e-12;
        let period = if in_plane { std::f64::consts::PI } else { std::f64::consts::TAU };
        phi = phi.rem_euclid(period);
        if phi >= period - 1e-15 {
            phi = 0.0;
        }
        Self { phi, theta }
    }

    /// Unit fibre axis `(cos t cos p, -cos t sin p, sin t)`.
    pub fn axis(&self) -> [f64; 3] {
        let (s, c) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [c * cp, -c * sp, s]
    }

    /// Azimuth of the projected axis in the measurement frame, in `[0, pi)`.
    pub fn axis_azimuth(&self) -> f64 {
        let a = self.axis();
        a[1].atan2(a[0]).rem_euclid(std::f64::consts::PI)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        let ry = Matrix3::new(ct, 0.0, st, 0.0, 1.0, 0.0, -st, 0.0, ct);
        let rz = Matrix3::new(cp, -sp, 0.0, sp, cp, 0.0, 0.0, 0.0, 1.0);
        ry * rz
    }
}

/// Shape of the ellipsoid band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidKernelParams {
    pub alpha: f64,
    pub softness: f64,
    pub center: [f64; 3],
    pub normalize: bool,
}

impl Default for EllipsoidKernelParams {
    fn default() -> Self {
        Self { alpha: 20.0, softness: 0.5, center: [0.0; 3], normalize: true }
    }
}

impl EllipsoidKernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.softness > 0.0 && self.center.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "kernel needs alpha > 1 and softness > 0, got alpha={} softness={}",
                self.alpha, self.softness
            )));
        }
        Ok(())
    }
}

/// Quadric form at `v`.
pub fn quadric_value(v: [f64; 3], orientation: &FibreOrientation, params: &EllipsoidKernelParams) -> f64 {
    let r = orientation.rotation();
    let d = Vector3::new(v[0] - params.center[0], v[1] - params.center[1], v[2] - params.center[2]);
    let y = r * d;
    params.alpha * y[0] * y[0] + y[1] * y[1] + y[2] * y[2]
}

/// Unnormalized band response at `v`.
pub fn band_value(v: [f64; 3], orientation: &FibreOrientation, params: &EllipsoidKernelParams) -> f64 {
    let q = quadric_value(v, orientation, params) - 1.0;
    (-q * q / (2.0 * params.softness * params.softness)).exp()
}

/// One fibre's response on a masked grid.
#[derive(Debug, Clone)]
pub struct FibreKernel {
    pub orientation: FibreOrientation,
    pub signal: SphericalSignal,
    /// Divisor applied to the band response (1 when not normalized).
    pub scale: f64,
    pub degenerate: bool,
}

impl FibreKernel {
    /// Kernel value at an arbitrary direction, on the same scale as `signal`.
    pub fn value_at(&self, v: [f64; 3], params: &EllipsoidKernelParams) -> f64 {
        band_value(v, &self.orientation, params) / self.scale
    }
}

fn kernel_column(
    orientation: &FibreOrientation,
    params: &EllipsoidKernelParams,
    grid: &HealpixGrid,
    mask: &CapMask,
) -> (Vec<f64>, f64, bool) {
    let mut col: Vec<f64> = mask.pixels().iter().map(|&p| band_value(grid.vector(p), orientation, params)).collect();
    let max = col.iter().cloned().fold(0.0, f64::max);
    let degenerate = max < DEGENERATE;
    let scale = if params.normalize && max > 0.0 { max } else { 1.0 };
    col.iter_mut().for_each(|v| *v /= scale);
    (col, scale, degenerate)
}

pub fn fibre_kernel(
    orientation: FibreOrientation,
    params: &EllipsoidKernelParams,
    grid: &HealpixGrid,
    mask: &CapMask,
) -> Result<FibreKernel> {
    params.validate()?;
    if mask.n_side() != grid.n_side() {
        return Err(Error::Shape(format!("mask n_side {} vs grid n_side {}", mask.n_side(), grid.n_side())));
    }
    let (col, scale, degenerate) = kernel_column(&orientation, params, grid, mask);
    if degenerate {
        log::warn!("degenerate kernel for phi={} theta={}", orientation.phi, orientation.theta);
    }
    let signal = SphericalSignal::from_masked(mask, &col)?;
    Ok(FibreKernel { orientation, signal, scale, degenerate })
}

/// Mixture atoms: the upper-hemisphere pixels of a HEALPix grid, one per
/// antipodal pair.
#[derive(Debug, Clone)]
pub struct AtomSet {
    grid: HealpixGrid,
    directions: Vec<FibreOrientation>,
    axes: Vec<[f64; 3]>,
    atom_pixel: Vec<usize>,
    pixel_atom: Vec<usize>,
}

impl AtomSet {
    pub fn new(resolution: GridResolution) -> Self {
        let grid = HealpixGrid::new(resolution);
        let n = grid.n_pix();
        let mut atom_of = vec![usize::MAX; n];
        let mut atom_pixel = Vec::new();
        for p in 0..n {
            let (t, ph) = grid.center(p);
            let v = grid.vector(p);
            let keep = if v[2].abs() < 1e-12 { ph < std::f64::consts::PI - 1e-12 } else { t < std::f64::consts::FRAC_PI_2 };
            if keep {
                atom_of[p] = atom_pixel.len();
                atom_pixel.push(p);
            }
        }
        for p in 0..n {
            if atom_of[p] == usize::MAX {
                let q = grid.antipode(p).expect("pixel in range");
                atom_of[p] = atom_of[q];
            }
        }
        let axes: Vec<[f64; 3]> = atom_pixel.iter().map(|&p| grid.vector(p)).collect();
        let directions = axes.iter().map(|&a| FibreOrientation::from_axis(a)).collect();
        Self { grid, directions, axes, atom_pixel, pixel_atom: atom_of }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn grid(&self) -> &HealpixGrid {
        &self.grid
    }

    pub fn directions(&self) -> &[FibreOrientation] {
        &self.directions
    }

    /// Unit axis of each atom, on the upper hemisphere.
    pub fn axes(&self) -> &[[f64; 3]] {
        &self.axes
    }

    /// Pixel of the fODF grid that represents each atom.
    pub fn atom_pixel(&self) -> &[usize] {
        &self.atom_pixel
    }

    /// Atom index of every pixel of the fODF grid (antipodes share an atom).
    pub fn pixel_atom(&self) -> &[usize] {
        &self.pixel_atom
    }

    /// Atom whose axis is closest to `axis` (antipodes identified).
    pub fn nearest(&self, axis: [f64; 3]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, a) in self.axes.iter().enumerate() {
            let c = (a[0] * axis[0] + a[1] * axis[1] + a[2] * axis[2]).abs();
            if c > best.1 {
                best = (i, c);
            }
        }
        best.0
    }
}

/// Canonical mixture directions on the upper hemisphere.
pub fn mixture_directions(resolution: GridResolution) -> Vec<FibreOrientation> {
    AtomSet::new(resolution).directions
}

/// Kernels of all atoms on one masked grid, one column per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    n_side: u32,
    theta_min: f64,
    theta_max: f64,
    params: EllipsoidKernelParams,
    directions: Vec<FibreOrientation>,
    scales: Vec<f64>,
    matrix: DMatrix<f64>,
}

const CACHE_MAGIC: &[u8; 4] = b"SLKB";
const CACHE_VERSION: u16 = 1;

impl KernelBank {
    pub fn build(
        directions: &[FibreOrientation],
        params: &EllipsoidKernelParams,
        grid: &HealpixGrid,
        mask: &CapMask,
    ) -> Result<Self> {
        params.validate()?;
        if directions.is_empty() {
            return Err(Error::InvalidInput("kernel bank needs at least one direction".into()));
        }
        if mask.n_side() != grid.n_side() {
            return Err(Error::Shape(format!("mask n_side {} vs grid n_side {}", mask.n_side(), grid.n_side())));
        }
        let cols: Vec<(Vec<f64>, f64, bool)> =
            directions.par_iter().map(|o| kernel_column(o, params, grid, mask)).collect();
        for (j, c) in cols.iter().enumerate() {
            if c.2 {
                log::warn!("degenerate kernel for direction {j}");
            }
        }
        let rows = mask.len();
        let mut matrix = DMatrix::zeros(rows, directions.len());
        for (j, (col, _, _)) in cols.iter().enumerate() {
            matrix.column_mut(j).copy_from_slice(col);
        }
        Ok(Self {
            n_side: grid.n_side(),
            theta_min: mask.theta_min(),
            theta_max: mask.theta_max(),
            params: *params,
            directions: directions.to_vec(),
            scales: cols.iter().map(|c| c.1).collect(),
            matrix,
        })
    }

    pub fn n_side(&self) -> u32 {
        self.n_side
    }

    pub fn params(&self) -> &EllipsoidKernelParams {
        &self.params
    }

    pub fn directions(&self) -> &[FibreOrientation] {
        &self.directions
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// `n_masked x n_directions`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.matrix.ncols()
    }

    /// `K w` in mask order.
    pub fn apply(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.n_atoms() {
            return Err(Error::Shape(format!("{} weights for {} atoms", weights.len(), self.n_atoms())));
        }
        let mut out = vec![0.0; self.n_rows()];
        for (j, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                for (o, k) in out.iter_mut().zip(self.matrix.column(j).iter()) {
                    *o += w * k;
                }
            }
        }
        Ok(out)
    }

    /// `K^T r` for `r` in mask order.
    pub fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        (0..self.n_atoms()).map(|j| self.matrix.column(j).iter().zip(r).map(|(k, x)| k * x).sum()).collect()
    }

    fn header_matches(&self, other: &Self) -> bool {
        self.n_side == other.n_side
            && self.theta_min == other.theta_min
            && self.theta_max == other.theta_max
            && self.params == other.params
            && self.directions == other.directions
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.n_side.to_le_bytes());
        for v in [self.theta_min, self.theta_max, self.params.alpha, self.params.softness] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.params.center {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(self.params.normalize as u8);
        buf.extend_from_slice(&(self.directions.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_rows() as u32).to_le_bytes());
        for d in &self.directions {
            buf.extend_from_slice(&d.phi.to_le_bytes());
            buf.extend_from_slice(&d.theta.to_le_bytes());
        }
        for s in &self.scales {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        for v in self.matrix.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = ByteReader { bytes: &bytes, pos: 0 };
        if r.take(4)? != CACHE_MAGIC {
            return Err(Error::Format("kernel cache: bad magic".into()));
        }
        let version = r.u16()?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("kernel cache: unsupported version {version}")));
        }
        let n_side = r.u32()?;
        let theta_min = r.f64()?;
        let theta_max = r.f64()?;
        let alpha = r.f64()?;
        let softness = r.f64()?;
        let center = [r.f64()?, r.f64()?, r.f64()?];
        let normalize = r.take(1)?[0] != 0;
        let n_dir = r.u32()? as usize;
        let rows = r.u32()? as usize;
        let mut directions = Vec::with_capacity(n_dir);
        for _ in 0..n_dir {
            directions.push(FibreOrientation { phi: r.f64()?, theta: r.f64()? });
        }
        let scales = (0..n_dir).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let data = (0..rows * n_dir).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("kernel cache: trailing bytes".into()));
        }
        Ok(Self {
            n_side,
            theta_min,
            theta_max,
            params: EllipsoidKernelParams { alpha, softness, center, normalize },
            directions,
            scales,
            matrix: DMatrix::from_vec(rows, n_dir, data),
        })
    }

    /// Read the cache at `path` if its header matches the requested
    /// configuration, otherwise build the bank and rewrite the cache.
    pub fn load_or_build(
        path: &Path,
        directions: &[FibreOrientation],
        params: &EllipsoidKernelParams,
        grid: &HealpixGrid,
        mask: &CapMask,
    ) -> Result<Self> {
        let probe = Self {
            n_side: grid.n_side(),
            theta_min: mask.theta_min(),
            theta_max: mask.theta_max(),
            params: *params,
            directions: directions.to_vec(),
            scales: Vec::new(),
            matrix: DMatrix::zeros(0, 0),
        };
        if let Ok(cached) = Self::read_cache(path) {
            if cached.header_matches(&probe) && cached.n_rows() == mask.len() {
                return Ok(cached);
            }
            log::info!("kernel cache {} does not match the configuration; rebuilding", path.display());
        }
        let bank = Self::build(directions, params, grid, mask)?;
        bank.write_cache(path)?;
        Ok(bank)
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{what}: trailing bytes")));
        }
        Ok(())
    }
}

/// Mixture `S_r = K w` as a masked signal.
pub fn reconstruct(weights: &[f64], bank: &KernelBank, mask: &CapMask) -> Result<SphericalSignal> {
    if mask.len() != bank.n_rows() || mask.n_side() != bank.n_side {
        return Err(Error::Shape("mask does not match the kernel bank".into()));
    }
    let vals = bank.apply(weights)?;
    SphericalSignal::from_masked(mask, &vals)
}

/// A fibre orientation distribution: one weight per mixture atom and the
/// even-degree SH view of the same function.
#[derive(Debug, Clone, PartialEq)]
pub struct Fodf {
    pub weights: Vec<f64>,
    pub sh: ShCoeffs,
}

impl Fodf {
    /// Weights with negatives clamped to zero.
    pub fn clamped(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.max(0.0)).collect()
    }
}

/// Direction `(theta, phi)` of an axis, in measurement-frame angles.
pub fn axis_angles(axis: [f64; 3]) -> (f64, f64) {
    vec2ang(axis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn axis_convention() {
        let o = FibreOrientation::new(0.0, 0.0).unwrap();
        assert_eq!(o.axis(), [1.0, 0.0, 0.0]);
        let r = o.rotation();
        assert!((r.transpose() * Vector3::x() - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        let o = FibreOrientation::new(0.3, 0.7).unwrap();
        let f = r_t_ex(&o);
        let a = o.axis();
        for i in 0..3 {
            assert!((f[i] - a[i]).abs() < 1e-14);
        }
    }

    fn r_t_ex(o: &FibreOrientation) -> Vector3<f64> {
        o.rotation().transpose() * Vector3::x()
    }

    #[test]
    fn canonical_forms() {
        let o = FibreOrientation::new(PI + 0.2, 0.0).unwrap();
        assert!((o.phi - 0.2).abs() < 1e-12);
        let o = FibreOrientation::from_axis([0.0, 0.0, -1.0]);
        assert!((o.theta - FRAC_PI_2).abs() < 1e-12);
        let o = FibreOrientation::new(1.0, 0.4).unwrap();
        let back = FibreOrientation::from_axis(o.axis());
        assert!((back.phi - 1.0).abs() < 1e-12 && (back.theta - 0.4).abs() < 1e-12);
    }

    #[test]
    fn quadric_extremes() {
        let p = EllipsoidKernelParams::default();
        let o = FibreOrientation::new(0.4, 0.2).unwrap();
        let f = o.axis();
        assert!((quadric_value(f, &o, &p) - 20.0).abs() < 1e-12);
        let perp = [-f[1], f[0], 0.0];
        let n = (perp[0] * perp[0] + perp[1] * perp[1]).sqrt();
        assert!((quadric_value([perp[0] / n, perp[1] / n, 0.0], &o, &p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn atom_counts() {
        assert_eq!(AtomSet::new(GridResolution::new(1).unwrap()).len(), 6);
        assert_eq!(AtomSet::new(GridResolution::new(4).unwrap()).len(), 96);
    }

    #[test]
    fn bank_apply_matches_transpose() {
        let grid = HealpixGrid::with_n_side(4).unwrap();
        let mask = CapMask::cap(&grid, PI / 3.0).unwrap();
        let dirs = mixture_directions(GridResolution::new(2).unwrap());
        let bank = KernelBank::build(&dirs, &EllipsoidKernelParams::default(), &grid, &mask).unwrap();
        let w: Vec<f64> = (0..bank.n_atoms()).map(|i| (i as f64).sin()).collect();
        let r: Vec<f64> = (0..bank.n_rows()).map(|i| (i as f64 * 0.7).cos()).collect();
        let kw = bank.apply(&w).unwrap();
        let ktr = bank.apply_transpose(&r);
        let lhs: f64 = kw.iter().zip(&r).map(|(a, b)| a * b).sum();
        let rhs: f64 = ktr.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
