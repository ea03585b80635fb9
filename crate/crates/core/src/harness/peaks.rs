//! Line-profile baseline (radial integration and peak pairing) and fODF
//! peak extraction.

use std::f64::consts::{PI, TAU};

use crate::forward::{axis_angles, AtomSet, FibreOrientation, Fodf};
use crate::projection::{PatternCentroid, ScatteringPattern};
use crate::sh::ShCoeffs;

use super::metrics::fodf_atom_values;

const RAYS_PER_BIN: usize = 4;
const RADIAL_STEP: f64 = 0.5;

fn bilinear(p: &ScatteringPattern, x: f64, y: f64) -> f64 {
    let (w, h) = (p.width(), p.height());
    let x0 = x.floor().clamp(0.0, (w - 1) as f64) as usize;
    let y0 = y.floor().clamp(0.0, (h - 1) as f64) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = ((x - x0 as f64).clamp(0.0, 1.0), (y - y0 as f64).clamp(0.0, 1.0));
    let top = p.get(y0, x0) * (1.0 - fx) + p.get(y0, x1) * fx;
    let bottom = p.get(y1, x0) * (1.0 - fx) + p.get(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Mean intensity along radii per azimuth bin. Bin `b` covers azimuths
/// `[b, b+1) * 2pi / n_bins`, with azimuth `atan2(dx, dy)` as in the
/// projection.
pub fn polar_line_profile(pattern: &ScatteringPattern, centroid: PatternCentroid, n_bins: usize) -> Vec<f64> {
    let r_max = centroid
        .x
        .min(centroid.y)
        .min((pattern.width() - 1) as f64 - centroid.x)
        .min((pattern.height() - 1) as f64 - centroid.y)
        .max(0.0);
    let n_r = (r_max / RADIAL_STEP).floor() as usize;
    let width = TAU / n_bins as f64;
    (0..n_bins)
        .map(|b| {
            let mut acc = 0.0;
            let mut count = 0usize;
            for j in 0..RAYS_PER_BIN {
                let phi = (b as f64 + (j as f64 + 0.5) / RAYS_PER_BIN as f64) * width;
                let (s, c) = phi.sin_cos();
                for k in 0..=n_r {
                    let r = k as f64 * RADIAL_STEP;
                    acc += bilinear(pattern, centroid.x + r * s, centroid.y + r * c);
                    count += 1;
                }
            }
            acc / count as f64
        })
        .collect()
}

/// One profile peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Azimuth in `[0, 2pi)`.
    pub azimuth: f64,
    pub prominence: f64,
    pub value: f64,
}

/// Circular local maxima whose prominence is at least `min_prominence`
/// times the profile range, by descending prominence.
pub fn pick_peaks(profile: &[f64], min_prominence: f64) -> Vec<Peak> {
    let n = profile.len();
    if n < 3 {
        return Vec::new();
    }
    let max = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 1e-12 * max.abs().max(1e-300)) {
        return Vec::new();
    }
    let at = |i: i64| profile[i.rem_euclid(n as i64) as usize];
    let width = TAU / n as f64;
    let mut peaks = Vec::new();
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        // extent of the plateau containing `start`
        let v = profile[start];
        let (mut lo, mut hi) = (start as i64, start as i64);
        while at(lo - 1) == v && hi - lo + 1 < n as i64 {
            lo -= 1;
        }
        while at(hi + 1) == v && hi - lo + 1 < n as i64 {
            hi += 1;
        }
        for i in lo..=hi {
            seen[i.rem_euclid(n as i64) as usize] = true;
        }
        if !(at(lo - 1) < v && at(hi + 1) < v) {
            continue;
        }
        // prominence on the circle: lowest point before a higher value; among
        // equal heights the one starting at the lower bin counts as higher
        let first = lo.rem_euclid(n as i64);
        let walk = |dir: i64| {
            let mut m = v;
            let mut i = if dir > 0 { hi } else { lo };
            for _ in 0..n {
                i += dir;
                let x = at(i);
                if x > v || (x == v && i.rem_euclid(n as i64) < first) {
                    break;
                }
                m = m.min(x);
            }
            m
        };
        let prominence = v - walk(1).max(walk(-1));
        if prominence + 1e-12 * range < min_prominence * range {
            continue;
        }
        let centre = 0.5 * (lo + hi) as f64;
        let offset = if lo == hi {
            let (a, b, c) = (at(lo - 1), v, at(lo + 1));
            let den = a - 2.0 * b + c;
            if den < 0.0 {
                (0.5 * (a - c) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        } else {
            0.0
        };
        let azimuth = ((centre + offset + 0.5) * width).rem_euclid(TAU);
        peaks.push(Peak { azimuth, prominence, value: v });
    }
    peaks.sort_by(|a, b| b.prominence.total_cmp(&a.prominence).then(a.azimuth.total_cmp(&b.azimuth)));
    peaks
}

/// Pairing tolerance around 180 degrees.
pub const PAIR_TOLERANCE_DEG: f64 = 35.0;

/// In-plane fibre directions in `[0, pi)` from peaks facing each other.
/// Each pair gives the axial mean of its azimuths plus 90 degrees.
pub fn slix_directions(peaks: &[Peak]) -> Vec<f64> {
    let tol = PAIR_TOLERANCE_DEG.to_radians();
    let mut used = vec![false; peaks.len()];
    let mut out = Vec::new();
    for i in 0..peaks.len() {
        if used[i] {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in (i + 1)..peaks.len() {
            if used[j] {
                continue;
            }
            let d = (peaks[j].azimuth - peaks[i].azimuth).rem_euclid(TAU);
            let off = (d - PI).abs();
            if off <= tol && best.is_none_or(|b| off < b.1) {
                best = Some((j, off));
            }
        }
        if let Some((j, _)) = best {
            used[i] = true;
            used[j] = true;
            // axial mean of the two azimuths (period pi)
            let (a, b) = (2.0 * peaks[i].azimuth, 2.0 * peaks[j].azimuth);
            let mean = 0.5 * (a.sin() + b.sin()).atan2(a.cos() + b.cos());
            out.push((mean + 0.5 * PI).rem_euclid(PI));
        }
    }
    out
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn sh_value(sh: &ShCoeffs, v: [f64; 3]) -> f64 {
    let (t, p) = axis_angles(v);
    sh.eval_at(t, p)
}

/// Local maximum of the SH function reached by pattern search from `start`.
pub fn refine_peak(sh: &ShCoeffs, start: [f64; 3]) -> [f64; 3] {
    let mut v = normalize(start);
    let mut f = sh_value(sh, v);
    let mut step = 2f64.to_radians();
    for _ in 0..500 {
        if step < 1e-5 {
            break;
        }
        let a = if v[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
        let e1 = normalize([a[1] * v[2] - a[2] * v[1], a[2] * v[0] - a[0] * v[2], a[0] * v[1] - a[1] * v[0]]);
        let e2 = [v[1] * e1[2] - v[2] * e1[1], v[2] * e1[0] - v[0] * e1[2], v[0] * e1[1] - v[1] * e1[0]];
        let mut best = (v, f);
        for k in 0..8 {
            let (s, c) = (k as f64 * PI / 4.0).sin_cos();
            let cand = normalize([
                v[0] + step * (c * e1[0] + s * e2[0]),
                v[1] + step * (c * e1[1] + s * e2[1]),
                v[2] + step * (c * e1[2] + s * e2[2]),
            ]);
            let fc = sh_value(sh, cand);
            if fc > best.1 {
                best = (cand, fc);
            }
        }
        if best.1 > f {
            v = best.0;
            f = best.1;
        } else {
            step *= 0.5;
        }
    }
    v
}

/// Up to `top_k` fibre directions: local maxima of the smoothed fODF on the
/// atoms above `threshold` times the maximum, greedily suppressed within
/// `min_separation`, then refined to the continuous SH maximum.
pub fn extract_fodf_peaks(
    fodf: &Fodf,
    atoms: &AtomSet,
    top_k: usize,
    min_separation: f64,
    threshold: f64,
) -> Vec<FibreOrientation> {
    let u = fodf_atom_values(fodf, atoms);
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || top_k == 0 {
        return Vec::new();
    }
    let axes = atoms.axes();
    let spacing = (4.0 * PI / atoms.grid().n_pix() as f64).sqrt();
    let near = (1.6 * spacing).cos();
    let mut cands: Vec<usize> = (0..u.len())
        .filter(|&i| {
            u[i] > 0.0
                && u[i] >= threshold * max
                && (0..u.len()).all(|j| j == i || dot(axes[i], axes[j]).abs() < near || u[j] <= u[i])
        })
        .collect();
    cands.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
    let min_cos = min_separation.cos();
    let mut picked: Vec<[f64; 3]> = Vec::new();
    for i in cands {
        if picked.len() >= top_k {
            break;
        }
        let v = refine_peak(&fodf.sh, axes[i]);
        if picked.iter().all(|p| dot(*p, v).abs() < min_cos) {
            picked.push(v);
        }
    }
    picked.into_iter().map(FibreOrientation::from_axis).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_two_bumps() {
        assert!(pick_peaks(&[1.0; 72], 0.1).is_empty());
        let prof: Vec<f64> = (0..72)
            .map(|i| {
                let i = i as f64;
                (-(i - 18.0).powi(2) / 8.0).exp() + (-(i - 54.0).powi(2) / 8.0).exp()
            })
            .collect();
        let peaks = pick_peaks(&prof, 0.1);
        assert_eq!(peaks.len(), 2);
        let bins: Vec<f64> = peaks.iter().map(|p| p.azimuth / (TAU / 72.0) - 0.5).collect();
        assert!(bins.iter().any(|b| (b - 18.0).abs() < 1e-9));
        assert!(bins.iter().any(|b| (b - 54.0).abs() < 1e-9));
    }

    #[test]
    fn plateau_reports_centre() {
        let mut prof = vec![0.0; 16];
        prof[4] = 1.0;
        prof[5] = 1.0;
        prof[6] = 1.0;
        let p = pick_peaks(&prof, 0.1);
        assert_eq!(p.len(), 1);
        assert!((p[0].azimuth - 5.5 * TAU / 16.0).abs() < 1e-12);
    }

    #[test]
    fn pairing() {
        let mk = |deg: f64| Peak { azimuth: deg.to_radians(), prominence: 1.0, value: 1.0 };
        let d = slix_directions(&[mk(90.0), mk(270.0)]);
        assert_eq!(d.len(), 1);
        assert!(d[0].min(PI - d[0]) < 1e-12);
        let mut d = slix_directions(&[mk(0.0), mk(90.0), mk(180.0), mk(270.0)]);
        d.sort_by(f64::total_cmp);
        assert!(d[0].min(PI - d[0]) < 1e-12 || (d[0] - 0.5 * PI).abs() < 1e-12);
        assert_eq!(d.len(), 2);
        assert!(slix_directions(&[]).is_empty());
    }
}
