//! Replays a synthetic chain and scores every estimator on the test blocks.
//!
//! `cargo run --release --example benchmark -- [epochs]`

use feerate_lab::eval::{engines_from_names, run_benchmark, BenchmarkOptions, Refit, SplitSpec};
use feerate_lab::fenn::FennConfig;
use feerate_lab::ingest::{synth_generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let config = SynthConfig::default();
    let chain = synth_generate(&config)?;

    let names: Vec<String> = ["btcflow", "bcore", "mslp", "fenn-adv", "fenn-self", "fenn-adv-tx"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let fenn = FennConfig {
        epochs,
        ..FennConfig::default()
    };
    let mut engines = engines_from_names(&names, config.block_weight_limit, &fenn, Refit::default())?;
    let report = run_benchmark(&chain, &mut engines, SplitSpec::default(), BenchmarkOptions::default())?;
    println!(
        "train {}..={}, test {}..={}",
        report.heights.train_start, report.heights.train_end, report.heights.test_start, report.heights.test_end
    );
    print!("{}", report.to_table());
    for row in &report.rows {
        if !row.errors.is_empty() {
            println!("{} unanswered: {:?}", row.engine, row.errors);
        }
    }
    Ok(())
}
