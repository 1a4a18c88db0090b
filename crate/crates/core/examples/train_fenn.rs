//! Trains the additive-attention network, saves it, reloads it and prices
//! a transaction for several confirmation targets.

use feerate_lab::fenn::{build_training_set, FennConfig, FennModel, Variant};
use feerate_lab::ingest::{reconstruct_mempool, synth_generate, SynthConfig};
use feerate_lab::model::BucketScheme;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let chain = synth_generate(&SynthConfig {
        n_blocks: 80,
        ..SynthConfig::default()
    })?;
    let tip = chain.tip_height().expect("non-empty chain") - 10;
    let history = chain.truncated(tip);

    let config = FennConfig {
        epochs: 20,
        ..FennConfig::new(Variant::Adv)
    };
    let data = build_training_set(&history, tip, &config.scheme)?;
    let (model, report) = FennModel::fit(&data, &config)?;
    println!(
        "{} instances, loss {:.4} -> {:.4} in {:.1}s",
        data.len(),
        report.epoch_losses.first().copied().unwrap_or(f64::NAN),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        report.seconds
    );

    let path = std::env::temp_dir().join(format!("feerate-lab-adv-{}.ckpt", std::process::id()));
    model.save(&path)?;
    let model = FennModel::load(&path)?;
    std::fs::remove_file(&path)?;

    let h = tip + 1;
    let observed = chain.truncated(h);
    let mempool = reconstruct_mempool(&observed, h, BucketScheme::geometric())?;
    let tx = chain
        .transactions()
        .find(|t| t.entry_height == h)
        .expect("a transaction enters at the query height");
    println!("tx {} ({} wu, paid {} sat)", tx.txid, tx.weight, tx.fee);
    for theta in [1u32, 3, 6, 12] {
        let fee = model.estimate_fee(&observed, &mempool, &tx.skeleton(), theta)?;
        println!("  theta {theta:>2}: {fee:>9.0} sat");
    }
    Ok(())
}
