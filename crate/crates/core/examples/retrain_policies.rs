//! Retrains the attention network at different block intervals on a chain
//! whose feerates drift upwards.

use feerate_lab::eval::{retrain_frequency_experiment, Refit, SplitSpec, RETRAIN_POLICIES};
use feerate_lab::fenn::FennConfig;
use feerate_lab::ingest::{synth_generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = SynthConfig::default();
    config.feerate.drift_per_block = 0.015;
    let chain = synth_generate(&config)?;
    let fenn = FennConfig {
        epochs: 30,
        ..FennConfig::default()
    };
    let results = retrain_frequency_experiment(&chain, &fenn, Refit::default(), SplitSpec::default(), &RETRAIN_POLICIES, Some(45))?;
    println!("{:>6} {:>5} {:>12} {:>8}", "every", "fits", "rmse", "mape%");
    for r in results {
        println!("{:>6} {:>5} {:>12.1} {:>8.2}", r.policy, r.row.fits, r.row.rmse, r.row.mape);
    }
    Ok(())
}
