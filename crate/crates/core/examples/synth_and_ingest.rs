//! Generates a synthetic chain, writes it as a CSV dump, loads it back and
//! rebuilds the mempool at a few heights.

use feerate_lab::ingest::{load_chain, reconstruct_mempool, synth_generate, write_chain, SynthConfig};
use feerate_lab::model::BucketScheme;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthConfig {
        n_blocks: 40,
        tx_arrival_rate: 12.0,
        ..SynthConfig::default()
    };
    let chain = synth_generate(&config)?;
    println!(
        "generated {} blocks and {} transactions",
        chain.blocks().len(),
        chain.tx_count()
    );

    let dir = std::env::temp_dir().join(format!("feerate-lab-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    write_chain(&dir, &chain)?;
    let loaded = load_chain(&dir)?;
    assert_eq!(loaded.tx_count(), chain.tx_count());
    println!("round trip through {} ok", dir.display());

    let first = loaded.first_height().expect("non-empty chain");
    for h in [first + 10, first + 20, first + 30] {
        let mempool = reconstruct_mempool(&loaded, h, BucketScheme::geometric())?;
        let busiest = mempool
            .bucket_weights()
            .iter()
            .enumerate()
            .max_by_key(|(_, w)| **w)
            .map(|(i, _)| i)
            .unwrap_or(0);
        println!(
            "height {h}: {} pending txs, {} weight units, heaviest bucket {busiest}",
            mempool.len(),
            mempool.total_weight()
        );
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
