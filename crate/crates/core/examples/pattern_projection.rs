//! Render a smooth spherical signal as a camera pattern and project it back.

use sli_fodf::healpix::{CapMask, HealpixGrid};
use sli_fodf::projection::{inverse_gnomonic, project_to_sphere, render_signal, MicroscopeGeometry, PatternCentroid};
use sli_fodf::signal::SphericalSignal;

fn main() -> sli_fodf::error::Result<()> {
    let geom = MicroscopeGeometry::default();
    for (dx, dy) in [(0.0, 10.0), (10.0, 0.0), (20.0, 20.0), (0.0, 40.0)] {
        let (t, p) = inverse_gnomonic(dx, dy, &geom);
        println!("offset ({dx:>4}, {dy:>4}) px -> theta {:5.1} deg, phi {:5.1} deg", t.to_degrees(), p.to_degrees());
    }

    let grid = HealpixGrid::with_n_side(16)?;
    let mask = CapMask::annulus(&grid, 10f64.to_radians(), 60f64.to_radians())?;
    let vals: Vec<f64> = mask.pixels().iter().map(|&p| {
        let v = grid.vector(p);
        1.0 + 0.5 * v[0] - 0.3 * v[1] * v[2]
    }).collect();
    let signal = SphericalSignal::from_masked(&mask, &vals)?;

    let centre = PatternCentroid { x: 40.0, y: 40.0 };
    let pattern = render_signal(&signal, &grid, &geom, centre, 81, 81)?;
    println!("rendered {}x{} pattern", pattern.width(), pattern.height());

    let (back, _) = project_to_sphere(&pattern, centre, &geom, &grid, &mask)?;
    let err = mask.pixels().iter().zip(&vals).map(|(&p, v)| (back.values()[p] - v).abs()).fold(0.0, f64::max);
    println!("max round-trip error over {} pixels: {err:.4}", mask.len());
    Ok(())
}
