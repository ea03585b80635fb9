//! Nested-scheme HEALPix pixelization.
//!
//! Pixels are indexed in the NESTED scheme only: the 12 base faces are
//! split recursively into four children, so `children(i) = 4i..4i+4` and
//! `parent(j) = j / 4`. Face-local coordinates `(ix, iy)` follow the usual
//! HEALPix convention (x towards the north-east edge, y towards the
//! north-west edge).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};

// Ring number (in units of n_side) of the southernmost corner of each face.
const JRLL: [i64; 12] = [2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4];
// Longitude index (in units of pi/4) of each face centre.
const JPLL: [i64; 12] = [1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7];

const NB_XOFFSET: [i64; 8] = [-1, -1, 0, 1, 1, 1, 0, -1];
const NB_YOFFSET: [i64; 8] = [0, 1, 1, 1, 0, -1, -1, -1];
const NB_FACEARRAY: [[i64; 12]; 9] = [
    [8, 9, 10, 11, -1, -1, -1, -1, 10, 11, 8, 9],
    [5, 6, 7, 4, 8, 9, 10, 11, 9, 10, 11, 8],
    [-1, -1, -1, -1, 5, 6, 7, 4, -1, -1, -1, -1],
    [4, 5, 6, 7, 11, 8, 9, 10, 11, 8, 9, 10],
    [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11],
    [1, 2, 3, 0, 0, 1, 2, 3, 5, 6, 7, 4],
    [-1, -1, -1, -1, 7, 4, 5, 6, -1, -1, -1, -1],
    [3, 0, 1, 2, 3, 0, 1, 2, 4, 5, 6, 7],
    [2, 3, 0, 1, -1, -1, -1, -1, 0, 1, 2, 3],
];
const NB_SWAPARRAY: [[u8; 3]; 9] = [
    [0, 0, 3],
    [0, 0, 6],
    [0, 0, 0],
    [0, 0, 5],
    [0, 0, 0],
    [5, 0, 0],
    [0, 0, 0],
    [6, 0, 0],
    [3, 0, 0],
];

/// HEALPix resolution parameter. Always a positive power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridResolution {
    n_side: u32,
}

impl GridResolution {
    pub fn new(n_side: u32) -> Result<Self> {
        if n_side == 0 || !n_side.is_power_of_two() || n_side > (1 << 20) {
            return Err(Error::InvalidResolution(n_side));
        }
        Ok(Self { n_side })
    }

    pub fn n_side(self) -> u32 {
        self.n_side
    }

    pub fn order(self) -> u32 {
        self.n_side.trailing_zeros()
    }

    pub fn n_pix(self) -> usize {
        12 * (self.n_side as usize).pow(2)
    }

    /// Resolution one level coarser, if any.
    pub fn coarser(self) -> Option<Self> {
        (self.n_side > 1).then(|| Self { n_side: self.n_side / 2 })
    }

    pub fn finer(self) -> Self {
        Self { n_side: self.n_side * 2 }
    }
}

/// Unit vector for colatitude `theta` and azimuth `phi`.
pub fn ang2vec(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

/// Colatitude in `[0, pi]` and azimuth in `[0, 2pi)` of a (not necessarily unit) vector.
pub fn vec2ang(v: [f64; 3]) -> (f64, f64) {
    let rho = v[0].hypot(v[1]);
    let theta = rho.atan2(v[2]);
    let mut phi = v[1].atan2(v[0]);
    if phi < 0.0 {
        phi += TAU;
    }
    if phi >= TAU {
        phi -= TAU;
    }
    (theta, phi)
}

/// Great-circle distance between two unit vectors.
pub fn angular_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let s = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    s.atan2(c)
}

fn spread_bits(v: u64) -> u64 {
    let mut out = 0;
    for bit in 0..32 {
        out |= ((v >> bit) & 1) << (2 * bit);
    }
    out
}

fn compress_bits(v: u64) -> u64 {
    let mut out = 0;
    for bit in 0..32 {
        out |= ((v >> (2 * bit)) & 1) << bit;
    }
    out
}

/// Pixel centres and topology of one HEALPix resolution.
#[derive(Debug, Clone)]
pub struct HealpixGrid {
    resolution: GridResolution,
    centers: Vec<(f64, f64)>,
    vectors: Vec<[f64; 3]>,
}

impl HealpixGrid {
    pub fn new(resolution: GridResolution) -> Self {
        let n_pix = resolution.n_pix();
        let mut centers = Vec::with_capacity(n_pix);
        let mut vectors = Vec::with_capacity(n_pix);
        for idx in 0..n_pix {
            let (z, phi) = pix2zphi(resolution, idx);
            let theta = z.clamp(-1.0, 1.0).acos();
            centers.push((theta, phi));
            vectors.push(ang2vec(theta, phi));
        }
        Self { resolution, centers, vectors }
    }

    pub fn with_n_side(n_side: u32) -> Result<Self> {
        GridResolution::new(n_side).map(Self::new)
    }

    pub fn resolution(&self) -> GridResolution {
        self.resolution
    }

    pub fn n_side(&self) -> u32 {
        self.resolution.n_side
    }

    pub fn n_pix(&self) -> usize {
        self.centers.len()
    }

    /// Solid angle of every pixel.
    pub fn pixel_area(&self) -> f64 {
        4.0 * PI / self.n_pix() as f64
    }

    fn check(&self, idx: usize) -> Result<()> {
        if idx >= self.n_pix() {
            return Err(Error::IndexOutOfRange { index: idx, n_pix: self.n_pix() });
        }
        Ok(())
    }

    pub fn pix2ang(&self, idx: usize) -> Result<(f64, f64)> {
        self.check(idx)?;
        Ok(self.centers[idx])
    }

    pub fn center(&self, idx: usize) -> (f64, f64) {
        self.centers[idx]
    }

    pub fn vector(&self, idx: usize) -> [f64; 3] {
        self.vectors[idx]
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    /// Pixel containing `(theta, phi)`. Points on a cell boundary go to the
    /// cell given by the half-open floor partition; the poles go to the
    /// lowest-index pixel touching them.
    pub fn ang2pix(&self, theta: f64, phi: f64) -> Result<usize> {
        if !theta.is_finite() || !phi.is_finite() || !(0.0..=PI).contains(&theta) {
            return Err(Error::InvalidAngle { theta, phi });
        }
        let ns = self.resolution.n_side as i64;
        let npface = (ns * ns) as usize;
        if theta == 0.0 {
            return Ok(npface - 1);
        }
        if theta == PI {
            return Ok(8 * npface);
        }
        let z = theta.cos();
        let za = z.abs();
        let tt = (phi / FRAC_PI_2).rem_euclid(4.0);
        let (ix, iy, face) = if za <= 2.0 / 3.0 {
            let temp1 = ns as f64 * (0.5 + tt);
            let temp2 = ns as f64 * (z * 0.75);
            let jp = (temp1 - temp2) as i64;
            let jm = (temp1 + temp2) as i64;
            let order = self.resolution.order();
            let ifp = jp >> order;
            let ifm = jm >> order;
            let face = if ifp == ifm {
                ifp | 4
            } else if ifp < ifm {
                ifp
            } else {
                ifm + 8
            };
            let ix = jm & (ns - 1);
            let iy = ns - (jp & (ns - 1)) - 1;
            (ix, iy, face)
        } else {
            let ntt = (tt as i64).min(3);
            let tp = tt - ntt as f64;
            // sqrt(3(1-|z|)) computed from sin(theta) to stay accurate near the poles
            let st = theta.sin();
            let tmp = ns as f64 * st / ((1.0 + za) / 3.0).sqrt();
            let jp = ((tp * tmp) as i64).min(ns - 1);
            let jm = (((1.0 - tp) * tmp) as i64).min(ns - 1);
            if z >= 0.0 {
                (ns - jm - 1, ns - jp - 1, ntt)
            } else {
                (jp, jm, ntt + 8)
            }
        };
        Ok(xyf2nest(self.resolution, ix, iy, face as usize))
    }

    /// Pixel containing the direction `v`.
    pub fn vec2pix(&self, v: [f64; 3]) -> Result<usize> {
        let (theta, phi) = vec2ang(v);
        self.ang2pix(theta, phi)
    }

    /// Edge and corner neighbours, in the order SW, W, NW, N, NE, E, SE, S
    /// with missing directions skipped.
    pub fn neighbors(&self, idx: usize) -> Result<Vec<usize>> {
        self.check(idx)?;
        let ns = self.resolution.n_side as i64;
        let (ix, iy, face) = nest2xyf(self.resolution, idx);
        let mut out = Vec::with_capacity(8);
        for m in 0..8 {
            let mut x = ix + NB_XOFFSET[m];
            let mut y = iy + NB_YOFFSET[m];
            let mut nbnum = 4i64;
            if x < 0 {
                x += ns;
                nbnum -= 1;
            } else if x >= ns {
                x -= ns;
                nbnum += 1;
            }
            if y < 0 {
                y += ns;
                nbnum -= 3;
            } else if y >= ns {
                y -= ns;
                nbnum += 3;
            }
            let f = NB_FACEARRAY[nbnum as usize][face];
            if f < 0 {
                continue;
            }
            let bits = NB_SWAPARRAY[nbnum as usize][face >> 2];
            if bits & 1 != 0 {
                x = ns - x - 1;
            }
            if bits & 2 != 0 {
                y = ns - y - 1;
            }
            if bits & 4 != 0 {
                std::mem::swap(&mut x, &mut y);
            }
            let nb = xyf2nest(self.resolution, x, y, f as usize);
            if nb != idx && !out.contains(&nb) {
                out.push(nb);
            }
        }
        Ok(out)
    }

    /// Pixel index of the parent at `n_side / 2`.
    pub fn parent(&self, idx: usize) -> Result<usize> {
        self.check(idx)?;
        if self.resolution.n_side == 1 {
            return Err(Error::NoParent);
        }
        Ok(idx / 4)
    }

    /// The four nested children at `2 n_side`.
    pub fn children(&self, idx: usize) -> Result<[usize; 4]> {
        self.check(idx)?;
        Ok([4 * idx, 4 * idx + 1, 4 * idx + 2, 4 * idx + 3])
    }

    /// Index of the pixel antipodal to `idx`. HEALPix centres are closed
    /// under the antipodal map.
    pub fn antipode(&self, idx: usize) -> Result<usize> {
        let v = self.vectors[idx];
        self.vec2pix([-v[0], -v[1], -v[2]])
    }
}

fn nest2xyf(res: GridResolution, idx: usize) -> (i64, i64, usize) {
    let order = res.order();
    let npface = 1usize << (2 * order);
    let face = idx >> (2 * order);
    let local = (idx & (npface - 1)) as u64;
    let ix = compress_bits(local) as i64;
    let iy = compress_bits(local >> 1) as i64;
    (ix, iy, face)
}

fn xyf2nest(res: GridResolution, ix: i64, iy: i64, face: usize) -> usize {
    let order = res.order();
    (face << (2 * order)) + (spread_bits(ix as u64) + (spread_bits(iy as u64) << 1)) as usize
}

fn pix2zphi(res: GridResolution, idx: usize) -> (f64, f64) {
    let ns = res.n_side as i64;
    let npix = res.n_pix() as f64;
    let fact2 = 4.0 / npix;
    let fact1 = (2 * ns) as f64 * fact2;
    let (ix, iy, face) = nest2xyf(res, idx);
    let jr = (JRLL[face] * ns) - ix - iy - 1;
    let (nr, z) = if jr < ns {
        (jr, 1.0 - (jr * jr) as f64 * fact2)
    } else if jr > 3 * ns {
        let nr = 4 * ns - jr;
        (nr, (nr * nr) as f64 * fact2 - 1.0)
    } else {
        (ns, (2 * ns - jr) as f64 * fact1)
    };
    let mut tmp = JPLL[face] * nr + ix - iy;
    if tmp < 0 {
        tmp += 8 * nr;
    }
    let phi = if nr == ns {
        0.75 * FRAC_PI_2 * tmp as f64 * fact1
    } else {
        (0.5 * FRAC_PI_2 * tmp as f64) / nr as f64
    };
    (z, phi)
}

// Slack for pixel centres lying exactly on a mask boundary.
const ANGLE_EPS: f64 = 1e-12;

/// Pixels of a grid whose centre colatitude lies in `[theta_min, theta_max]`.
///
/// A plain cap (`theta_min = 0`) is the measurement region of a scatterometry
/// pattern; a positive `theta_min` additionally cuts out the directly
/// transmitted beam around the pattern centre.
#[derive(Debug, Clone, PartialEq)]
pub struct CapMask {
    n_side: u32,
    theta_min: f64,
    theta_max: f64,
    included: Vec<bool>,
    pixels: Vec<usize>,
}

impl CapMask {
    /// `included[i] == (theta_i <= theta_max)`.
    pub fn cap(grid: &HealpixGrid, theta_max: f64) -> Result<Self> {
        Self::annulus(grid, 0.0, theta_max)
    }

    pub fn annulus(grid: &HealpixGrid, theta_min: f64, theta_max: f64) -> Result<Self> {
        if !theta_max.is_finite() || !theta_min.is_finite() {
            return Err(Error::InvalidInput("non-finite mask angle".into()));
        }
        if theta_max <= 0.0 || theta_max > PI || theta_min < 0.0 || theta_min >= theta_max {
            return Err(Error::InvalidInput(format!(
                "mask angles must satisfy 0 <= theta_min < theta_max <= pi, got [{theta_min}, {theta_max}]"
            )));
        }
        let included: Vec<bool> = grid
            .centers()
            .iter()
            .map(|&(t, _)| t <= theta_max + ANGLE_EPS && (theta_min == 0.0 || t >= theta_min - ANGLE_EPS))
            .collect();
        Ok(Self::from_included(grid.n_side(), theta_min, theta_max, included))
    }

    /// Full-sphere mask.
    pub fn full(grid: &HealpixGrid) -> Self {
        Self::from_included(grid.n_side(), 0.0, PI, vec![true; grid.n_pix()])
    }

    /// Mask one level coarser: a parent is included when any child is.
    pub fn coarsen(&self) -> Result<Self> {
        if self.n_side == 1 {
            return Err(Error::NoParent);
        }
        let mut included = vec![false; self.included.len() / 4];
        for &p in &self.pixels {
            included[p / 4] = true;
        }
        Ok(Self::from_included(self.n_side / 2, self.theta_min, self.theta_max, included))
    }

    fn from_included(n_side: u32, theta_min: f64, theta_max: f64, included: Vec<bool>) -> Self {
        let pixels = included.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        Self { n_side, theta_min, theta_max, included, pixels }
    }

    pub fn n_side(&self) -> u32 {
        self.n_side
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn included(&self) -> &[bool] {
        &self.included
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.included.get(idx).copied().unwrap_or(false)
    }

    /// Included pixel indices in ascending order.
    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Position of every grid pixel inside `pixels()`, `None` when excluded.
    pub fn positions(&self) -> Vec<Option<usize>> {
        let mut pos = vec![None; self.included.len()];
        for (k, &p) in self.pixels.iter().enumerate() {
            pos[p] = Some(k);
        }
        pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_validation() {
        assert!(GridResolution::new(0).is_err());
        assert!(GridResolution::new(6).is_err());
        assert_eq!(GridResolution::new(4).unwrap().n_pix(), 192);
        assert_eq!(GridResolution::new(1).unwrap().n_pix(), 12);
    }

    #[test]
    fn base_pixel_layout() {
        let g = HealpixGrid::with_n_side(1).unwrap();
        for i in 0..12 {
            let (theta, phi) = g.pix2ang(i).unwrap();
            let z = theta.cos();
            let face_phi = match i {
                0..=3 => (2 * i + 1) as f64 * PI / 4.0,
                4..=7 => (i - 4) as f64 * PI / 2.0,
                _ => (2 * (i - 8) + 1) as f64 * PI / 4.0,
            };
            let face_z = match i {
                0..=3 => 2.0 / 3.0,
                4..=7 => 0.0,
                _ => -2.0 / 3.0,
            };
            assert!((z - face_z).abs() < 1e-12, "pixel {i}: z = {z}");
            assert!((phi - face_phi).abs() < 1e-12, "pixel {i}: phi = {phi}");
        }
    }

    #[test]
    fn out_of_range_index() {
        let g = HealpixGrid::with_n_side(2).unwrap();
        assert!(matches!(g.pix2ang(48), Err(Error::IndexOutOfRange { .. })));
        assert!(g.neighbors(48).is_err());
    }

    #[test]
    fn poles_and_invalid_angles() {
        let g = HealpixGrid::with_n_side(4).unwrap();
        let north = g.ang2pix(0.0, 1.3).unwrap();
        assert_eq!(north, 15);
        assert!(north < 4 * 16);
        assert!(g.ang2pix(f64::NAN, 0.0).is_err());
        assert!(g.ang2pix(0.5, f64::INFINITY).is_err());
        assert!(g.ang2pix(-0.1, 0.0).is_err());
    }

    #[test]
    fn hierarchy() {
        let g1 = HealpixGrid::with_n_side(1).unwrap();
        assert_eq!(g1.children(0).unwrap(), [0, 1, 2, 3]);
        assert!(matches!(g1.parent(0), Err(Error::NoParent)));
        let g2 = HealpixGrid::with_n_side(2).unwrap();
        for i in 0..12 {
            for c in g1.children(i).unwrap() {
                assert_eq!(g2.parent(c).unwrap(), i);
            }
        }
    }

    #[test]
    fn cap_mask_edges() {
        let g = HealpixGrid::with_n_side(4).unwrap();
        assert_eq!(CapMask::cap(&g, PI).unwrap().len(), g.n_pix());
        assert!(CapMask::cap(&g, 1e-9).unwrap().len() <= 4);
        assert!(CapMask::cap(&g, f64::NAN).is_err());
        let m = CapMask::cap(&g, PI / 3.0).unwrap();
        for i in 0..g.n_pix() {
            assert_eq!(m.contains(i), g.center(i).0 <= PI / 3.0 + 1e-12);
        }
    }

    #[test]
    fn antipodes_are_centres() {
        let g = HealpixGrid::with_n_side(4).unwrap();
        for i in 0..g.n_pix() {
            let a = g.antipode(i).unwrap();
            let (v, w) = (g.vector(i), g.vector(a));
            assert!((v[0] + w[0]).abs() + (v[1] + w[1]).abs() + (v[2] + w[2]).abs() < 1e-12);
        }
    }
}
