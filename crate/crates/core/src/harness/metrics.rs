//! Comparison metrics between fODFs and fibre directions.

use crate::error::{Error, Result};
use crate::forward::{AtomSet, Fodf, FibreOrientation};
use crate::sh::ShCoeffs;

/// Angular correlation over degrees `l >= 2`.
pub fn acc(a: &ShCoeffs, b: &ShCoeffs) -> Result<f64> {
    if a.l_max() != b.l_max() {
        return Err(Error::Shape(format!("ACC of l_max {} and {}", a.l_max(), b.l_max())));
    }
    let (x, y) = (&a.values()[1..], &b.values()[1..]);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (p, q) in x.iter().zip(y) {
        ab += p * q;
        aa += p * p;
        bb += q * q;
    }
    if aa <= 0.0 || bb <= 0.0 {
        return Err(Error::NoAngularContent);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Jensen-Shannon divergence (natural log) between two non-negative mass
/// vectors after clamping negatives and normalizing.
pub fn jsd_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("JSD of lengths {} and {}", a.len(), b.len())));
    }
    let norm = |v: &[f64]| -> Result<Vec<f64>> {
        let c: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
        let s: f64 = c.iter().sum();
        if !(s > 0.0) {
            return Err(Error::ZeroMass);
        }
        Ok(c.into_iter().map(|x| x / s).collect())
    };
    let (p, q) = (norm(a)?, norm(b)?);
    let kl = |x: f64, m: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
    let mut d = 0.0;
    for (&x, &y) in p.iter().zip(&q) {
        let m = 0.5 * (x + y);
        d += 0.5 * kl(x, m) + 0.5 * kl(y, m);
    }
    Ok(d.clamp(0.0, std::f64::consts::LN_2))
}

/// fODF values at the atoms, evaluated from the SH view.
pub fn fodf_atom_values(fodf: &Fodf, atoms: &AtomSet) -> Vec<f64> {
    atoms
        .axes()
        .iter()
        .map(|&a| {
            let (t, p) = crate::forward::axis_angles(a);
            fodf.sh.eval_at(t, p)
        })
        .collect()
}

/// JSD between the smoothed atom distributions of two fODFs.
pub fn jsd(a: &Fodf, b: &Fodf, atoms: &AtomSet) -> Result<f64> {
    jsd_values(&fodf_atom_values(a, atoms), &fodf_atom_values(b, atoms))
}

/// Axial angle between two fibre orientations, radians in `[0, pi/2]`.
pub fn angular_error(a: &FibreOrientation, b: &FibreOrientation) -> f64 {
    let (x, y) = (a.axis(), b.axis());
    (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]).abs().min(1.0).acos()
}

/// Axial difference of two in-plane azimuths, radians in `[0, pi/2]`.
pub fn azimuth_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

/// Best one-to-one matching of estimated to true directions (all
/// permutations; at most three entries). Returns the per-truth errors in
/// truth order; missing estimates count as `pi/2`.
pub fn matched_errors(truth: &[FibreOrientation], est: &[FibreOrientation]) -> Vec<f64> {
    let n = truth.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let idx: Vec<usize> = (0..est.len()).collect();
    for perm in permutations(&idx, n.min(est.len())) {
        let mut errs = vec![std::f64::consts::FRAC_PI_2; n];
        for (t, &e) in perm.iter().enumerate() {
            errs[t] = angular_error(&truth[t], &est[e]);
        }
        let total: f64 = errs.iter().sum();
        if best.as_ref().is_none_or(|b| total < b.0) {
            best = Some((total, errs));
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| vec![std::f64::consts::FRAC_PI_2; n])
}

fn permutations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        let rest: Vec<usize> = items.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &y)| y).collect();
        for mut p in permutations(&rest, k - 1) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}
