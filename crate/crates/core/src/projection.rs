//! Raster scattering patterns and their mapping onto the sphere.
//!
//! A pattern pixel at offset `(dx, dy)` from the centroid (columns, rows)
//! is seen under the incidence direction
//!
//! ```text
//! phi   = atan2(dx, dy)
//! theta = atan(d / H * sqrt(dx^2 + dy^2))
//! ```

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::healpix::{ang2vec, angular_distance, CapMask, HealpixGrid};
use crate::signal::SphericalSignal;

/// Row-major raster of non-negative intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringPattern {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScatteringPattern {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("empty pattern".into()));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!("{} intensities for a {width}x{height} pattern", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!("pattern intensity {v} is not a finite non-negative value")));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Pattern rotated by a quarter turn about the raster centre:
    /// `out[r][c] = in[c][w-1-r]` for square rasters.
    pub fn rotate_quarter(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0; w * h];
        for r in 0..w {
            for c in 0..h {
                data[r * h + c] = self.data[c * w + (w - 1 - r)];
            }
        }
        Self { width: h, height: w, data }
    }

    /// Copy divided by the maximum intensity (unchanged if all zero).
    pub fn max_normalized(&self) -> Self {
        let m = self.data.iter().cloned().fold(0.0, f64::max);
        if m <= 0.0 {
            return self.clone();
        }
        Self { width: self.width, height: self.height, data: self.data.iter().map(|v| v / m).collect() }
    }
}

/// Illumination and camera geometry. Lengths: `h_cm`, `l_cm` in cm,
/// `r_led_mm`, `d_mm` in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroscopeGeometry {
    pub h_cm: f64,
    pub l_cm: f64,
    pub r_led_mm: f64,
    pub d_mm: f64,
}

impl Default for MicroscopeGeometry {
    fn default() -> Self {
        // d is chosen so that a 40-pixel radius reaches 60 degrees.
        Self { h_cm: 13.0, l_cm: 40.0, r_led_mm: 1.8, d_mm: 5.629 }
    }
}

impl MicroscopeGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_cm > 0.0 && self.d_mm > 0.0 && self.h_cm.is_finite() && self.d_mm.is_finite()) {
            return Err(Error::InvalidInput(format!("geometry needs H > 0 and d > 0, got H={} d={}", self.h_cm, self.d_mm)));
        }
        Ok(())
    }

    /// `d / H`, dimensionless.
    pub fn ratio(&self) -> f64 {
        self.d_mm / (10.0 * self.h_cm)
    }
}

/// Pattern centre in pixel coordinates (`x` = column, `y` = row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternCentroid {
    pub x: f64,
    pub y: f64,
}

impl PatternCentroid {
    pub fn geometric(pattern: &ScatteringPattern) -> Self {
        Self { x: (pattern.width - 1) as f64 / 2.0, y: (pattern.height - 1) as f64 / 2.0 }
    }
}

fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Separable Gaussian blur with half-sample reflective borders, truncated at 4 sigma.
pub fn gaussian_smooth(pattern: &ScatteringPattern, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return pattern.data.clone();
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = (pattern.width as i64, pattern.height as i64);
    let mut tmp = vec![0.0; pattern.data.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let cc = reflect(c + k as i64 - radius, w);
                acc += kv * pattern.data[(r * w) as usize + cc];
            }
            tmp[(r * w + c) as usize] = acc;
        }
    }
    let mut out = vec![0.0; pattern.data.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let rr = reflect(r + k as i64 - radius, h);
                acc += kv * tmp[rr * w as usize + c as usize];
            }
            out[(r * w + c) as usize] = acc;
        }
    }
    out
}

/// Brightest pixel of the smoothed pattern; ties go to the smallest `(row, col)`.
pub fn find_centroid(pattern: &ScatteringPattern, sigma: f64) -> Result<PatternCentroid> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidInput(format!("smoothing width {sigma} must be non-negative")));
    }
    let smooth = gaussian_smooth(pattern, sigma);
    let max = smooth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = smooth.iter().cloned().fold(f64::INFINITY, f64::min);
    if max - min <= 1e-12 * max.abs().max(1e-300) {
        return Err(Error::CentroidUndefined);
    }
    let tie = max - 1e-12 * max.abs();
    let idx = smooth.iter().position(|&v| v >= tie).expect("maximum exists");
    Ok(PatternCentroid { x: (idx % pattern.width) as f64, y: (idx / pattern.width) as f64 })
}

/// Incidence direction `(theta, phi)` of the raster offset `(dx, dy)`.
pub fn inverse_gnomonic(dx: f64, dy: f64, geometry: &MicroscopeGeometry) -> (f64, f64) {
    let rho = dx.hypot(dy);
    if rho == 0.0 {
        return (0.0, 0.0);
    }
    let theta = (geometry.ratio() * rho).atan();
    let mut phi = dx.atan2(dy);
    if phi < 0.0 {
        phi += TAU;
    }
    if phi >= TAU {
        phi -= TAU;
    }
    (theta, phi)
}

/// Raster offset `(dx, dy)` of the direction `(theta, phi)`, `theta < pi/2`.
pub fn forward_gnomonic(theta: f64, phi: f64, geometry: &MicroscopeGeometry) -> (f64, f64) {
    let rho = theta.tan() / geometry.ratio();
    let (s, c) = phi.sin_cos();
    (rho * s, rho * c)
}

/// Diagnostics from one projection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProjectionReport {
    /// Masked-in pixels with no raster sample nearby; their value is 0.
    pub coverage_gaps: Vec<usize>,
}

const IDW_K: usize = 4;
const EXACT_HIT: f64 = 1e-12;

/// Inverse-squared-distance weights over the (up to) `IDW_K` nearest
/// candidates; an exact hit takes the sample value alone.
fn idw(mut cands: Vec<(f64, f64)>) -> f64 {
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    cands.truncate(IDW_K);
    if cands[0].0 < EXACT_HIT {
        return cands[0].1;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (d, v) in cands {
        let w = 1.0 / (d * d);
        num += w * v;
        den += w;
    }
    num / den
}

/// Interpolate the pattern onto the pixels of `mask`.
pub fn project_to_sphere(
    pattern: &ScatteringPattern,
    centroid: PatternCentroid,
    geometry: &MicroscopeGeometry,
    grid: &HealpixGrid,
    mask: &CapMask,
) -> Result<(SphericalSignal, ProjectionReport)> {
    geometry.validate()?;
    if mask.n_side() != grid.n_side() {
        return Err(Error::Shape(format!("mask n_side {} vs grid n_side {}", mask.n_side(), grid.n_side())));
    }
    if mask.theta_max() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::InvalidInput("projection needs a cap below the equator".into()));
    }
    let (w, h) = (pattern.width, pattern.height);
    let dirs: Vec<[f64; 3]> = (0..w * h)
        .map(|i| {
            let (t, p) = inverse_gnomonic((i % w) as f64 - centroid.x, (i / w) as f64 - centroid.y, geometry);
            ang2vec(t, p)
        })
        .collect();

    // Mean angular spacing between horizontally adjacent samples.
    let mut spacing = 0.0;
    let mut count = 0usize;
    for r in 0..h {
        for c in 1..w {
            spacing += angular_distance(dirs[r * w + c - 1], dirs[r * w + c]);
            count += 1;
        }
    }
    let gap_limit = if count > 0 { 3.0 * spacing / count as f64 } else { f64::INFINITY };

    let mut values = vec![0.0; grid.n_pix()];
    let mut report = ProjectionReport::default();
    const WINDOW: i64 = 2;
    for &p in mask.pixels() {
        let (t, ph) = grid.center(p);
        let v = grid.vector(p);
        let (dx, dy) = forward_gnomonic(t, ph, geometry);
        let (cx, cy) = ((centroid.x + dx).round() as i64, (centroid.y + dy).round() as i64);
        let cx = cx.clamp(0, w as i64 - 1);
        let cy = cy.clamp(0, h as i64 - 1);
        let mut cands = Vec::with_capacity(25);
        for r in (cy - WINDOW).max(0)..=(cy + WINDOW).min(h as i64 - 1) {
            for c in (cx - WINDOW).max(0)..=(cx + WINDOW).min(w as i64 - 1) {
                let i = r as usize * w + c as usize;
                cands.push((angular_distance(v, dirs[i]), pattern.data[i]));
            }
        }
        let nearest = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        if nearest > gap_limit {
            report.coverage_gaps.push(p);
            continue;
        }
        values[p] = idw(cands);
    }
    if !report.coverage_gaps.is_empty() {
        log::warn!("projection: {} masked pixels lack raster coverage", report.coverage_gaps.len());
    }
    Ok((SphericalSignal::from_parts(grid.n_side(), values, mask.included().to_vec()), report))
}

/// Render a spherical signal into a raster by interpolating over the
/// nearest valid grid pixels. Raster pixels whose direction has no valid
/// grid pixel nearby are left at zero.
pub fn render_signal(
    signal: &SphericalSignal,
    grid: &HealpixGrid,
    geometry: &MicroscopeGeometry,
    centroid: PatternCentroid,
    width: usize,
    height: usize,
) -> Result<ScatteringPattern> {
    geometry.validate()?;
    if signal.n_side() != grid.n_side() {
        return Err(Error::Shape(format!("signal n_side {} vs grid n_side {}", signal.n_side(), grid.n_side())));
    }
    let reach = 1.5 * grid.pixel_area().sqrt();
    let mut data = vec![0.0; width * height];
    for (i, out) in data.iter_mut().enumerate() {
        let (t, p) = inverse_gnomonic((i % width) as f64 - centroid.x, (i / width) as f64 - centroid.y, geometry);
        let v = ang2vec(t, p);
        let home = grid.ang2pix(t, p)?;
        let mut cands: Vec<(f64, f64)> = std::iter::once(home)
            .chain(grid.neighbors(home)?)
            .filter(|&q| signal.is_valid(q))
            .map(|q| (angular_distance(v, grid.vector(q)), signal.values()[q]))
            .collect();
        if cands.is_empty() || cands.iter().all(|c| c.0 > reach) {
            continue;
        }
        cands.retain(|c| c.0 <= 2.0 * reach);
        *out = idw(cands).max(0.0);
    }
    ScatteringPattern::new(width, height, data)
}
