//! Even real spherical harmonics: least-squares fits on a full grid and on a cap.

use std::f64::consts::PI;

use sli_fodf::harness::metrics::acc;
use sli_fodf::healpix::{CapMask, HealpixGrid};
use sli_fodf::sh::{evaluate, n_coeffs, ShBasis, ShCoeffs};

fn main() -> sli_fodf::error::Result<()> {
    let grid = HealpixGrid::with_n_side(16)?;
    let l_max = 8;
    println!("l_max {l_max}: {} even coefficients", n_coeffs(l_max));

    let values: Vec<f64> = (0..n_coeffs(l_max)).map(|i| 1.0 / (1.0 + i as f64)).collect();
    let truth = ShCoeffs::new(l_max, values)?;
    let signal = evaluate(&truth, &grid, None);
    let energy = 4.0 * PI / grid.n_pix() as f64 * signal.values().iter().map(|v| v * v).sum::<f64>();
    let coeff_energy: f64 = truth.values().iter().map(|v| v * v).sum();
    println!("sphere energy {energy:.5}, coefficient energy {coeff_energy:.5}");

    let full = ShBasis::new(&grid, l_max, None)?;
    println!("full-sphere fit ACC {:.10}", acc(&full.fit(&signal)?, &truth)?);

    let cap = CapMask::cap(&grid, 60f64.to_radians())?;
    let masked = ShBasis::new(&grid, l_max, Some(&cap))?;
    let fit = masked.fit(&signal)?;
    println!("60 deg cap fit ACC {:.10}", acc(&fit, &truth)?);
    let (t, p) = (0.7, 2.1);
    println!("f({t}, {p}) = {:.6}, f(antipode) = {:.6}", fit.eval_at(t, p), fit.eval_at(PI - t, p + PI));
    Ok(())
}
