//! Compares analytic and finite-difference gradients for every layer and
//! every network variant.

use feerate_lab::fenn::{gradient_check, FennConfig, Variant};
use feerate_lab::nn::layer_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tolerance = 1e-4;
    for (name, report) in layer_suite(7) {
        println!("{name:<20} {:.2e} ({} params)", report.max_rel_err, report.checked);
    }
    for variant in Variant::ALL {
        let config = FennConfig {
            seq_hidden: 16,
            head_hidden: [16, 8],
            ..FennConfig::new(variant)
        };
        let report = gradient_check(&config, 4)?;
        let verdict = if report.passes(tolerance) { "ok" } else { "FAIL" };
        let name = format!("fenn-{variant}");
        println!("{name:<20} {:.2e} worst {} {verdict}", report.max_rel_err, report.worst);
    }
    Ok(())
}
