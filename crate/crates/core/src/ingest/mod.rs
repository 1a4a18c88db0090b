//! Loading chain dumps, rebuilding historical mempools and generating
//! synthetic chains.

mod dump;
mod synth;

pub use dump::{
    load_chain, load_chain_json, read_blocks, read_tx_records, write_blocks, write_chain, write_chain_json,
    write_transactions, TxRecord, BLOCKS_FILE, BLOCK_HEADER, TXS_FILE, TX_HEADER,
};
pub use synth::{synth_generate, FeerateModel, SynthConfig};

use crate::error::{Error, Result};
use crate::model::{BucketScheme, ChainView, Height, MempoolEntry, MempoolSnapshot, Transaction};

/// Whether `tx` sits in the mempool once block `height` is known.
pub fn in_mempool_at(tx: &Transaction, height: Height) -> bool {
    tx.entry_height <= height
        && tx.confirm_height.is_none_or(|c| c > height)
        && tx.leave_height.is_none_or(|l| l > height)
}

/// The unconfirmed set after block `height`: entered at or before it and
/// neither confirmed nor evicted by it.
pub fn reconstruct_mempool(chain: &ChainView, height: Height, scheme: BucketScheme) -> Result<MempoolSnapshot> {
    match chain.tip_height() {
        Some(tip) if height <= tip => {}
        Some(tip) => {
            return Err(Error::InvalidInput(format!("height {height} is beyond the tip {tip}")));
        }
        None => return Err(Error::InvalidInput("chain has no blocks".into())),
    }
    let entries = chain
        .transactions()
        .enumerate()
        .filter(|(_, tx)| in_mempool_at(tx, height))
        .map(|(i, tx)| MempoolEntry {
            tx_index: i,
            feerate: tx.feerate,
            weight: tx.weight,
            entry_height: tx.entry_height,
        })
        .collect();
    MempoolSnapshot::from_entries(height, entries, scheme)
}
