//! Line-profile peak picking on an in-plane fibre pattern.

use sli_fodf::forward::FibreOrientation;
use sli_fodf::harness::config::Config;
use sli_fodf::harness::peaks::{pick_peaks, polar_line_profile, slix_directions};
use sli_fodf::harness::pipeline::Pipeline;
use sli_fodf::harness::synthetic::{generate_synthetic, FibreSpec, SyntheticSpec};

fn main() -> sli_fodf::error::Result<()> {
    let cfg = Config::default();
    let pl = Pipeline::new(&cfg)?;
    for phi_deg in [0.0f64, 35.0, 90.0, 140.0] {
        let o = FibreOrientation::new(phi_deg.to_radians(), 0.0)?;
        let spec = SyntheticSpec::new(vec![FibreSpec { orientation: o, weight: 1.0 }], 0.0, 0)?;
        let (pattern, _) = generate_synthetic(&spec, &pl)?;
        let profile = polar_line_profile(&pattern, pl.centroid(&pattern), cfg.n_bins);
        let peaks = pick_peaks(&profile, cfg.min_prominence);
        let dirs: Vec<String> = slix_directions(&peaks).iter().map(|d| format!("{:.1}", d.to_degrees())).collect();
        println!(
            "fibre phi {phi_deg:>5.1} deg (in-plane azimuth {:5.1}): {} peaks, directions [{}] deg",
            o.axis_azimuth().to_degrees(),
            peaks.len(),
            dirs.join(", ")
        );
    }
    Ok(())
}
