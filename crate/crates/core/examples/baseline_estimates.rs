//! Asks the three analytical estimators for a fee at one height.

use feerate_lab::bcore::{BCore, BCoreConfig};
use feerate_lab::btcflow::{BtcFlow, BtcFlowConfig};
use feerate_lab::ingest::{reconstruct_mempool, synth_generate, SynthConfig};
use feerate_lab::model::BucketScheme;
use feerate_lab::mslp::{self, MslpConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthConfig::default();
    let chain = synth_generate(&config)?;
    let h = chain.first_height().expect("non-empty chain") + 150;
    let observed = chain.truncated(h);
    let mempool = reconstruct_mempool(&observed, h, BucketScheme::geometric())?;
    let now = observed.block(h).expect("block exists").timestamp;

    let flow = BtcFlow::new(BtcFlowConfig {
        block_weight: config.block_weight_limit as f64,
        ..BtcFlowConfig::default()
    })?;
    let history = chain.truncated(h - 1);
    let core = BCore::fit(&history, BCoreConfig::default())?;
    let perceptron = mslp::fit(&history, h - 1, &MslpConfig::with_block(config.block_weight_limit))?;

    println!("mempool at {h}: {} txs", mempool.len());
    println!("{:>5} {:>10} {:>10} {:>10}", "theta", "btcflow", "bcore", "mslp");
    for theta in [1u32, 2, 3, 6, 12, 24] {
        let f = flow.estimate(&observed, &mempool, theta as f64 * 10.0, now)?.feerate;
        let c = core.estimate(theta, &mempool)?.feerate;
        let m = perceptron
            .estimate(theta, &mempool)
            .map(|r| format!("{r:.2}"))
            .unwrap_or_else(|e| e.kind().to_string());
        println!("{theta:>5} {f:>10.2} {c:>10.2} {m:>10}");
    }
    println!("feerates in sat/vB");
    Ok(())
}
