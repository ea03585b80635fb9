//! Fibre kernels on the sphere and the kernel bank over all atom directions.

use sli_fodf::forward::{fibre_kernel, EllipsoidKernelParams, FibreOrientation};
use sli_fodf::harness::config::Config;
use sli_fodf::harness::pipeline::Pipeline;

fn main() -> sli_fodf::error::Result<()> {
    let pl = Pipeline::new(&Config::default())?;
    let kp = EllipsoidKernelParams::default();
    for elevation in [0.0f64, 25.0, 50.0, 75.0] {
        let o = FibreOrientation::new(30f64.to_radians(), elevation.to_radians())?;
        let k = fibre_kernel(o, &kp, &pl.grid, &pl.mask)?;
        let lit = pl.mask.pixels().iter().filter(|&&p| k.signal.values()[p] > 0.5).count();
        println!(
            "elevation {elevation:>4} deg: {lit:>4} of {} pixels above half maximum{}",
            pl.mask.len(),
            if k.degenerate { " (degenerate)" } else { "" }
        );
    }
    println!("kernel bank: {} rows x {} atoms", pl.bank.n_rows(), pl.bank.n_atoms());

    let mut w = vec![0.0; pl.atoms.len()];
    w[pl.atoms.nearest(FibreOrientation::new(0.3, 0.2)?.axis())] = 1.0;
    w[pl.atoms.nearest(FibreOrientation::new(1.9, 0.1)?.axis())] = 0.6;
    let s = pl.bank.apply(&w)?;
    println!("two-atom mixture: min {:.3}, max {:.3}", s.iter().copied().fold(f64::MAX, f64::min), s.iter().copied().fold(0.0, f64::max));
    Ok(())
}
