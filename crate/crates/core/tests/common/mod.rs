//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sli_fodf::healpix::{ang2vec, CapMask, HealpixGrid};

pub const JRLL: [f64; 12] = [2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0, 4.0, 4.0, 4.0, 4.0];
pub const JPLL: [f64; 12] = [1.0, 3.0, 5.0, 7.0, 0.0, 2.0, 4.0, 6.0, 1.0, 3.0, 5.0, 7.0];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Zone {
    North,
    Equator,
    South,
}

pub fn zone_of(n: f64, face: usize, x: f64, y: f64) -> Zone {
    let jr = JRLL[face] * n - x - y;
    if jr < n {
        Zone::North
    } else if jr > 3.0 * n {
        Zone::South
    } else {
        Zone::Equator
    }
}

/// Continuous HEALPix face map: face coordinates `(x, y) in [0, n]^2` to
/// `(z, phi)`, using the analytic formula of `zone` (phi is not wrapped).
pub fn face_map(n: f64, face: usize, x: f64, y: f64, zone: Zone) -> (f64, f64) {
    let jr = JRLL[face] * n - x - y;
    match zone {
        Zone::North => {
            let nr = jr;
            let phi = if nr > 0.0 { PI / 4.0 * (JPLL[face] * nr + x - y) / nr } else { 0.0 };
            (1.0 - nr * nr / (3.0 * n * n), phi)
        }
        Zone::South => {
            let nr = 4.0 * n - jr;
            let phi = if nr > 0.0 { PI / 4.0 * (JPLL[face] * nr + x - y) / nr } else { 0.0 };
            (nr * nr / (3.0 * n * n) - 1.0, phi)
        }
        Zone::Equator => ((2.0 * n - jr) * 2.0 / (3.0 * n), PI / (4.0 * n) * (JPLL[face] * n + x - y)),
    }
}

pub fn face_point(n: f64, face: usize, x: f64, y: f64) -> [f64; 3] {
    let (z, phi) = face_map(n, face, x, y, zone_of(n, face, x, y));
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

/// Nested index to `(ix, iy, face)` by bit de-interleaving.
pub fn nest_to_xyf(n_side: u32, idx: usize) -> (usize, usize, usize) {
    let npface = (n_side * n_side) as usize;
    let face = idx / npface;
    let local = idx % npface;
    let (mut ix, mut iy) = (0, 0);
    for bit in 0..16 {
        ix |= ((local >> (2 * bit)) & 1) << bit;
        iy |= ((local >> (2 * bit + 1)) & 1) << bit;
    }
    (ix, iy, face)
}

fn jacobian_det(n: f64, face: usize, x: f64, y: f64) -> f64 {
    let zone = zone_of(n, face, x, y);
    let h = 1e-5;
    let (zxp, pxp) = face_map(n, face, x + h, y, zone);
    let (zxm, pxm) = face_map(n, face, x - h, y, zone);
    let (zyp, pyp) = face_map(n, face, x, y + h, zone);
    let (zym, pym) = face_map(n, face, x, y - h, zone);
    let zx = (zxp - zxm) / (2.0 * h);
    let px = (pxp - pxm) / (2.0 * h);
    let zy = (zyp - zym) / (2.0 * h);
    let py = (pyp - pym) / (2.0 * h);
    (zx * py - zy * px).abs()
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(order);
    for i in 0..order {
        let mut x = (PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=order {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (x + 1.0), 0.5 * w));
    }
    out
}

/// Solid angle of a nested pixel by quadrature of the face-map Jacobian.
pub fn pixel_area_quadrature(n_side: u32, idx: usize) -> f64 {
    let (ix, iy, face) = nest_to_xyf(n_side, idx);
    let n = n_side as f64;
    let gl = gauss_legendre(8);
    let mut area = 0.0;
    for &(tx, wx) in &gl {
        for &(ty, wy) in &gl {
            area += wx * wy * jacobian_det(n, face, ix as f64 + tx, iy as f64 + ty);
        }
    }
    area
}

fn wrap_pi(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Face coordinates of the point `(z, phi)` on `face`, by Newton iteration
/// on the forward face map starting from `(x0, y0)`. `None` when Newton
/// fails to converge.
pub fn invert_face_map(n: f64, face: usize, z: f64, phi: f64, x0: f64, y0: f64) -> Option<(f64, f64)> {
    let (mut x, mut y) = (x0, y0);
    for _ in 0..200 {
        let zone = zone_of(n, face, x, y);
        let (fz, fp) = face_map(n, face, x, y, zone);
        let rz = fz - z;
        let rp = wrap_pi(fp - phi);
        if rz.abs() < 1e-14 && rp.abs() < 1e-13 {
            return Some((x, y));
        }
        let h = 1e-7;
        let (zx, px) = {
            let (a, b) = face_map(n, face, x + h, y, zone);
            let (c, d) = face_map(n, face, x - h, y, zone);
            ((a - c) / (2.0 * h), (b - d) / (2.0 * h))
        };
        let (zy, py) = {
            let (a, b) = face_map(n, face, x, y + h, zone);
            let (c, d) = face_map(n, face, x, y - h, zone);
            ((a - c) / (2.0 * h), (b - d) / (2.0 * h))
        };
        let det = zx * py - zy * px;
        if det.abs() < 1e-300 {
            return None;
        }
        let mut dx = (py * rz - zy * rp) / det;
        let mut dy = (zx * rp - px * rz) / det;
        let step = dx.hypot(dy);
        if step > 0.5 {
            dx *= 0.5 / step;
            dy *= 0.5 / step;
        }
        x -= dx;
        y -= dy;
    }
    None
}

/// HEALPix ring-scheme centre table built directly from the ring layout.
pub fn ring_centres(n_side: u32) -> Vec<(f64, f64)> {
    let n = n_side as f64;
    let ns = n_side as usize;
    let mut out = Vec::new();
    for i in 1..(4 * ns) {
        let (z, count, shift) = if i < ns {
            (1.0 - (i * i) as f64 / (3.0 * n * n), 4 * i, 0.5)
        } else if i <= 3 * ns {
            let s = if (i - ns + 1) % 2 == 1 { 0.5 } else { 0.0 };
            (4.0 / 3.0 - 2.0 * i as f64 / (3.0 * n), 4 * ns, s)
        } else {
            let k = 4 * ns - i;
            ((k * k) as f64 / (3.0 * n * n) - 1.0, 4 * k, 0.5)
        };
        for j in 0..count {
            let phi = (j as f64 + shift) * 2.0 * PI / count as f64;
            out.push((z.acos(), phi));
        }
    }
    out
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Axial angle between two directions (antipodes identified), radians.
pub fn axial_angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    (dot(a, b).abs() / (na * nb)).min(1.0).acos()
}

pub type M3 = [[f64; 3]; 3];

pub fn matmul(a: M3, b: M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// `(Rv)^T diag(alpha, 1, 1) (Rv)` with `R = R_y(theta) R_z(phi)` built entry by entry.
pub fn brute_quadric(v: [f64; 3], phi: f64, theta: f64, alpha: f64) -> f64 {
    let ry = [[theta.cos(), 0.0, theta.sin()], [0.0, 1.0, 0.0], [-theta.sin(), 0.0, theta.cos()]];
    let rz = [[phi.cos(), -phi.sin(), 0.0], [phi.sin(), phi.cos(), 0.0], [0.0, 0.0, 1.0]];
    let r = matmul(ry, rz);
    let y: Vec<f64> = (0..3).map(|i| (0..3).map(|k| r[i][k] * v[k]).sum()).collect();
    let lambda = [alpha, 1.0, 1.0];
    (0..3).map(|i| lambda[i] * y[i] * y[i]).sum()
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..1.0);
    let p: f64 = rng.random_range(0.0..TAU);
    let s = (1.0 - z * z).sqrt();
    [s * p.cos(), s * p.sin(), z]
}

/// Pixels whose azimuthal rotation by `delta` lands exactly on another pixel centre.
pub fn ring_exact(grid: &HealpixGrid, mask: &CapMask, delta: f64) -> Vec<(usize, usize)> {
    mask.pixels()
        .iter()
        .filter_map(|&p| {
            let (t, ph) = grid.center(p);
            let q = grid.ang2pix(t, (ph + delta).rem_euclid(TAU)).ok()?;
            let expect = ang2vec(t, (ph + delta).rem_euclid(TAU));
            let got = grid.vector(q);
            (dot(expect, got) > 1.0 - 1e-14 && mask.contains(q)).then_some((p, q))
        })
        .collect()
}

pub fn components(grid: &HealpixGrid, nodes: &BTreeSet<usize>) -> usize {
    let mut seen = BTreeSet::new();
    let mut count = 0;
    for &start in nodes {
        if !seen.insert(start) {
            continue;
        }
        count += 1;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for q in grid.neighbors(p).unwrap() {
                if nodes.contains(&q) && seen.insert(q) {
                    queue.push_back(q);
                }
            }
        }
    }
    count
}

/// Pearson correlation from raw moments, a different route from the
/// centred two-pass form.
pub fn pcc_moments(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        sa += a[i];
        sb += b[i];
        sab += a[i] * b[i];
        saa += a[i] * a[i];
        sbb += b[i] * b[i];
    }
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

pub fn scalar_l_r(s: &[f64], r: &[f64], lambda_r: f64) -> f64 {
    let mut l2 = 0.0;
    for i in 0..s.len() {
        l2 += (s[i] - r[i]) * (s[i] - r[i]);
    }
    l2 + lambda_r * (1.0 - pcc_moments(s, r))
}

pub fn scalar_l_s(f: &[f64], lambda_s: f64, sigma_s: f64) -> f64 {
    let mut acc = 0.0;
    for &x in f {
        acc += (1.0 + x * x / (2.0 * sigma_s * sigma_s)).ln();
    }
    lambda_s * acc
}

pub fn scalar_l_n(f: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &x in f {
        let m = x.min(0.0);
        acc += m * m;
    }
    acc
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
