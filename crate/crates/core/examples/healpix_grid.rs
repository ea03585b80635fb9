//! Nested HEALPix indexing, neighbours, hierarchy and the camera-aperture mask.

use sli_fodf::healpix::{CapMask, HealpixGrid};

fn main() -> sli_fodf::error::Result<()> {
    for n_side in [1, 2, 4, 8, 16] {
        let g = HealpixGrid::with_n_side(n_side)?;
        println!("n_side {n_side:>2}: {:>4} pixels, area {:.5} sr", g.n_pix(), g.pixel_area());
    }

    let g = HealpixGrid::with_n_side(16)?;
    let (theta, phi) = (30f64.to_radians(), 120f64.to_radians());
    let p = g.ang2pix(theta, phi)?;
    let (t, f) = g.pix2ang(p)?;
    println!("(30, 120) deg -> pixel {p}, centre ({:.2}, {:.2}) deg", t.to_degrees(), f.to_degrees());
    println!("neighbours {:?}", g.neighbors(p)?);
    println!("parent {}, children {:?}, antipode {}", g.parent(p)?, g.children(p)?, g.antipode(p)?);

    let cap = CapMask::cap(&g, 60f64.to_radians())?;
    let annulus = CapMask::annulus(&g, 10f64.to_radians(), 60f64.to_radians())?;
    println!("cap 60 deg: {} pixels, annulus 10-60 deg: {} pixels", cap.len(), annulus.len());
    let mut m = cap;
    while let Ok(c) = m.coarsen() {
        println!("  coarsened to n_side {}: {} pixels", c.n_side(), c.len());
        m = c;
    }
    Ok(())
}
