//! Domain types shared by every estimator: transactions, blocks, the chain
//! view used as the replay source, mempool snapshots and feerate buckets.
//!
//! Feerates are always satoshi per virtual byte, where one vByte is four
//! weight units.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Height = u64;

/// Weight units per virtual byte.
pub const WEIGHT_PER_VBYTE: f64 = 4.0;

/// Consensus block weight limit.
pub const MAX_BLOCK_WEIGHT: u64 = 4_000_000;

/// `fee / (weight / 4)` in sat/vB.
pub fn compute_feerate(fee: u64, weight: u64) -> Result<f64> {
    if weight == 0 {
        return Err(Error::InvalidInput("transaction weight must be positive".into()));
    }
    Ok(fee as f64 / (weight as f64 / WEIGHT_PER_VBYTE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub txid: String,
    pub version: i32,
    /// Raw serialized size in bytes.
    pub size: u64,
    pub weight: u64,
    pub inputs: u32,
    pub outputs: u32,
    /// Fee in satoshi.
    pub fee: u64,
    /// Derived from `fee` and `weight`; kept in sync by [`Transaction::new`].
    pub feerate: f64,
    pub entry_height: Height,
    pub leave_height: Option<Height>,
    pub confirm_height: Option<Height>,
    pub first_seen_time: i64,
    pub confirm_time: Option<i64>,
}

/// The caller-visible part of a transaction before a fee is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxSkeleton {
    pub version: i32,
    pub size: u64,
    pub weight: u64,
    pub inputs: u32,
    pub outputs: u32,
}

impl Transaction {
    /// Builds an unconfirmed transaction and derives its feerate.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        txid: impl Into<String>,
        version: i32,
        size: u64,
        weight: u64,
        inputs: u32,
        outputs: u32,
        fee: u64,
        first_seen_time: i64,
        entry_height: Height,
    ) -> Result<Self> {
        let tx = Transaction {
            txid: txid.into(),
            version,
            size,
            weight,
            inputs,
            outputs,
            fee,
            feerate: compute_feerate(fee, weight)?,
            entry_height,
            leave_height: None,
            confirm_height: None,
            first_seen_time,
            confirm_time: None,
        };
        tx.validate()?;
        Ok(tx)
    }

    pub fn confirmed_at(mut self, height: Height, time: i64) -> Result<Self> {
        self.confirm_height = Some(height);
        self.leave_height = Some(height);
        self.confirm_time = Some(time);
        self.validate()?;
        Ok(self)
    }

    pub fn skeleton(&self) -> TxSkeleton {
        TxSkeleton {
            version: self.version,
            size: self.size,
            weight: self.weight,
            inputs: self.inputs,
            outputs: self.outputs,
        }
    }

    pub fn vsize(&self) -> f64 {
        self.weight as f64 / WEIGHT_PER_VBYTE
    }

    /// Blocks between entering the mempool and confirmation.
    pub fn confirmation_interval(&self) -> Option<u64> {
        self.confirm_height.map(|c| c - self.entry_height)
    }

    /// Left the mempool without being confirmed.
    pub fn is_evicted(&self) -> bool {
        self.confirm_height.is_none() && self.leave_height.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("tx {}: {msg}", self.txid)));
        if self.weight == 0 {
            return fail("weight must be positive".into());
        }
        if self.size == 0 {
            return fail("size must be positive".into());
        }
        if self.inputs == 0 || self.outputs == 0 {
            return fail("needs at least one input and one output".into());
        }
        let expected = compute_feerate(self.fee, self.weight)?;
        let tolerance = 1e-9 * expected.abs().max(f64::MIN_POSITIVE);
        if !self.feerate.is_finite() || (self.feerate - expected).abs() > tolerance {
            return fail(format!(
                "stored feerate {} disagrees with fee/vsize {}",
                self.feerate, expected
            ));
        }
        if let Some(c) = self.confirm_height {
            if c < self.entry_height {
                return fail(format!("confirm height {c} precedes entry height {}", self.entry_height));
            }
            if let Some(l) = self.leave_height {
                if l != c {
                    return fail(format!("leave height {l} differs from confirm height {c}"));
                }
            }
        }
        if let Some(l) = self.leave_height {
            if l < self.entry_height {
                return fail(format!("leave height {l} precedes entry height {}", self.entry_height));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: Height,
    pub timestamp: i64,
    /// Seconds since the previous block.
    pub interval: i64,
    pub size: u64,
    pub difficulty: f64,
    pub total_weight: u64,
    pub tx_count: u64,
    pub mean_feerate: f64,
}

impl Block {
    pub fn validate(&self) -> Result<()> {
        if self.interval < 0 {
            return Err(Error::Validation(format!(
                "block {}: negative interval {}",
                self.height, self.interval
            )));
        }
        if !self.difficulty.is_finite() || !self.mean_feerate.is_finite() {
            return Err(Error::Validation(format!("block {}: non-finite field", self.height)));
        }
        Ok(())
    }

    /// Network features in the fixed order `[interval, size, difficulty, weight, count, mean feerate]`.
    pub fn network_features(&self) -> [f64; 6] {
        [
            self.interval as f64,
            self.size as f64,
            self.difficulty,
            self.total_weight as f64,
            self.tx_count as f64,
            self.mean_feerate,
        ]
    }
}

/// Ordered blocks plus every known transaction, keyed by txid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainView {
    blocks: Vec<Block>,
    transactions: IndexMap<String, Transaction>,
}

impl ChainView {
    pub fn new(blocks: Vec<Block>, transactions: Vec<Transaction>) -> Result<Self> {
        let mut map = IndexMap::with_capacity(transactions.len());
        for tx in transactions {
            if map.contains_key(&tx.txid) {
                return Err(Error::Validation(format!("duplicate txid {}", tx.txid)));
            }
            map.insert(tx.txid.clone(), tx);
        }
        let chain = ChainView {
            blocks,
            transactions: map,
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        for block in &self.blocks {
            block.validate()?;
        }
        for pair in self.blocks.windows(2) {
            if pair[1].height <= pair[0].height {
                return Err(Error::Validation(format!(
                    "block heights not strictly increasing: {} then {}",
                    pair[0].height, pair[1].height
                )));
            }
        }
        for tx in self.transactions.values() {
            tx.validate()?;
            if let Some(c) = tx.confirm_height {
                if self.block(c).is_none() {
                    return Err(Error::Validation(format!(
                        "tx {} confirmed in unknown block {c}",
                        tx.txid
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn transactions(&self) -> impl ExactSizeIterator<Item = &Transaction> {
        self.transactions.values()
    }

    pub fn transaction(&self, txid: &str) -> Option<&Transaction> {
        self.transactions.get(txid)
    }

    pub fn transaction_at(&self, index: usize) -> Option<&Transaction> {
        self.transactions.get_index(index).map(|(_, tx)| tx)
    }

    pub fn tx_count(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `h_n`, the highest block height.
    pub fn tip_height(&self) -> Option<Height> {
        self.blocks.last().map(|b| b.height)
    }

    pub fn first_height(&self) -> Option<Height> {
        self.blocks.first().map(|b| b.height)
    }

    pub fn block(&self, height: Height) -> Option<&Block> {
        self.block_index(height).map(|i| &self.blocks[i])
    }

    pub fn block_index(&self, height: Height) -> Option<usize> {
        self.blocks.binary_search_by_key(&height, |b| b.height).ok()
    }

    /// Height of the latest block whose timestamp is at or before `time`.
    pub fn entry_height_for_time(&self, time: i64) -> Option<Height> {
        let idx = self.blocks.partition_point(|b| b.timestamp <= time);
        idx.checked_sub(1).map(|i| self.blocks[i].height)
    }

    /// Transaction indices grouped by confirmation height.
    pub fn confirmations_by_height(&self) -> BTreeMap<Height, Vec<usize>> {
        let mut out: BTreeMap<Height, Vec<usize>> = BTreeMap::new();
        for (i, tx) in self.transactions.values().enumerate() {
            if let Some(c) = tx.confirm_height {
                out.entry(c).or_default().push(i);
            }
        }
        out
    }

    /// The chain as an observer at `height` would know it: later blocks are
    /// dropped, transactions not yet seen are dropped, and confirmations or
    /// evictions after `height` are erased.
    pub fn truncated(&self, height: Height) -> ChainView {
        let blocks: Vec<Block> = self
            .blocks
            .iter()
            .take_while(|b| b.height <= height)
            .cloned()
            .collect();
        let transactions = self
            .transactions
            .iter()
            .filter(|(_, tx)| tx.entry_height <= height)
            .map(|(id, tx)| {
                let mut tx = tx.clone();
                if tx.confirm_height.is_some_and(|c| c > height) {
                    tx.confirm_height = None;
                    tx.confirm_time = None;
                }
                if tx.leave_height.is_some_and(|l| l > height) {
                    tx.leave_height = None;
                }
                (id.clone(), tx)
            })
            .collect();
        ChainView {
            blocks,
            transactions,
        }
    }
}

/// One unconfirmed transaction as seen from a mempool snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MempoolEntry {
    /// Position of the transaction inside its [`ChainView`].
    pub tx_index: usize,
    pub feerate: f64,
    pub weight: u64,
    pub entry_height: Height,
}

/// The unconfirmed transaction set at a block height with bucket aggregates.
/// Entries are sorted by feerate, highest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MempoolSnapshot {
    height: Height,
    entries: Vec<MempoolEntry>,
    scheme: BucketScheme,
    bucket_counts: Vec<u64>,
    bucket_weights: Vec<u64>,
}

impl MempoolSnapshot {
    pub fn from_entries(height: Height, mut entries: Vec<MempoolEntry>, scheme: BucketScheme) -> Result<Self> {
        entries.sort_by(|a, b| b.feerate.total_cmp(&a.feerate).then(a.tx_index.cmp(&b.tx_index)));
        let (bucket_counts, bucket_weights) = aggregate(&entries, &scheme)?;
        Ok(MempoolSnapshot {
            height,
            entries,
            scheme,
            bucket_counts,
            bucket_weights,
        })
    }

    pub fn height(&self) -> Height {
        self.height
    }

    pub fn entries(&self) -> &[MempoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scheme(&self) -> &BucketScheme {
        &self.scheme
    }

    pub fn bucket_counts(&self) -> &[u64] {
        &self.bucket_counts
    }

    pub fn bucket_weights(&self) -> &[u64] {
        &self.bucket_weights
    }

    pub fn total_weight(&self) -> u64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    pub fn txids<'a>(&'a self, chain: &'a ChainView) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter_map(move |e| chain.transaction_at(e.tx_index).map(|tx| tx.txid.as_str()))
    }

    /// Checks the stored aggregates against a recount of the members.
    pub fn verify_aggregates(&self) -> Result<()> {
        let (counts, weights) = aggregate(&self.entries, &self.scheme)?;
        if counts != self.bucket_counts || weights != self.bucket_weights {
            return Err(Error::Validation(format!(
                "mempool aggregates at height {} are stale",
                self.height
            )));
        }
        Ok(())
    }

    /// Same members re-bucketed under another scheme.
    pub fn with_scheme(&self, scheme: BucketScheme) -> Result<Self> {
        MempoolSnapshot::from_entries(self.height, self.entries.clone(), scheme)
    }
}

fn aggregate(entries: &[MempoolEntry], scheme: &BucketScheme) -> Result<(Vec<u64>, Vec<u64>)> {
    let n = scheme.bucket_count();
    let mut counts = vec![0u64; n];
    let mut weights = vec![0u64; n];
    for e in entries {
        let slot = scheme.slot_of(e.feerate)?;
        counts[slot] += 1;
        weights[slot] += e.weight;
    }
    Ok((counts, weights))
}

/// Discretisation of the feerate axis.
///
/// `IntegerCeil` labels a feerate by `ceil(r)` clamped to `[u_min, u_max]`.
/// `Geometric` uses boundaries `r_min * ratio^i`; bucket `i` covers
/// `[boundary(i), boundary(i + 1))`, feerates below `r_min` fall in bucket 0
/// and feerates at or above `r_max` in the last bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BucketScheme {
    IntegerCeil { u_min: u32, u_max: u32 },
    Geometric { r_min: f64, r_max: f64, ratio: f64 },
}

impl Default for BucketScheme {
    fn default() -> Self {
        BucketScheme::geometric()
    }
}

impl BucketScheme {
    pub fn integer_ceil() -> Self {
        BucketScheme::IntegerCeil { u_min: 1, u_max: 1000 }
    }

    pub fn geometric() -> Self {
        BucketScheme::Geometric {
            r_min: 1.0,
            r_max: 10_000.0,
            ratio: 1.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BucketScheme::IntegerCeil { u_min, u_max } if u_min == 0 || u_min > u_max => Err(
                Error::InvalidInput(format!("integer scale bounds [{u_min}, {u_max}] are invalid")),
            ),
            BucketScheme::Geometric { r_min, r_max, ratio }
                if !(r_min > 0.0 && r_max > r_min && ratio > 1.0 && r_max.is_finite()) =>
            {
                Err(Error::InvalidInput(format!(
                    "geometric bounds r_min={r_min} r_max={r_max} ratio={ratio} are invalid"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn bucket_count(&self) -> usize {
        match *self {
            BucketScheme::IntegerCeil { u_min, u_max } => (u_max - u_min + 1) as usize,
            BucketScheme::Geometric { r_min, r_max, ratio } => {
                let mut n = ((r_max / r_min).ln() / ratio.ln()).ceil().max(1.0) as usize;
                while r_min * ratio.powi(n as i32) < r_max {
                    n += 1;
                }
                n
            }
        }
    }

    /// Bucket label: the integer scale `u` or the geometric index `i`.
    pub fn bucket_of(&self, feerate: f64) -> Result<usize> {
        if feerate.is_nan() || feerate < 0.0 {
            return Err(Error::InvalidInput(format!("feerate {feerate} must be non-negative")));
        }
        Ok(match *self {
            BucketScheme::IntegerCeil { u_min, u_max } => {
                let u = feerate.ceil().clamp(u_min as f64, u_max as f64);
                u as usize
            }
            BucketScheme::Geometric { r_min, ratio, .. } => {
                let last = self.bucket_count() - 1;
                if feerate < r_min {
                    return Ok(0);
                }
                let mut i = ((feerate / r_min).ln() / ratio.ln()).floor().max(0.0) as usize;
                i = i.min(last);
                while i > 0 && self.lower_bound(i) > feerate {
                    i -= 1;
                }
                while i < last && self.lower_bound(i + 1) <= feerate {
                    i += 1;
                }
                i
            }
        })
    }

    /// Zero-based array position for a feerate.
    pub fn slot_of(&self, feerate: f64) -> Result<usize> {
        let label = self.bucket_of(feerate)?;
        Ok(self.slot_for_label(label))
    }

    pub fn slot_for_label(&self, label: usize) -> usize {
        match *self {
            BucketScheme::IntegerCeil { u_min, .. } => label - u_min as usize,
            BucketScheme::Geometric { .. } => label,
        }
    }

    pub fn label_for_slot(&self, slot: usize) -> usize {
        match *self {
            BucketScheme::IntegerCeil { u_min, .. } => slot + u_min as usize,
            BucketScheme::Geometric { .. } => slot,
        }
    }

    /// Lower feerate boundary of the bucket in `slot`.
    pub fn lower_bound(&self, slot: usize) -> f64 {
        match *self {
            BucketScheme::IntegerCeil { u_min, .. } => {
                let u = (slot + u_min as usize) as f64;
                if slot == 0 {
                    0.0
                } else {
                    u - 1.0
                }
            }
            BucketScheme::Geometric { r_min, ratio, .. } => {
                if slot == 0 {
                    0.0
                } else {
                    r_min * ratio.powi(slot as i32)
                }
            }
        }
    }

    /// Upper feerate boundary of the bucket in `slot` (infinite for the last).
    pub fn upper_bound(&self, slot: usize) -> f64 {
        if slot + 1 >= self.bucket_count() {
            return f64::INFINITY;
        }
        match *self {
            BucketScheme::IntegerCeil { u_min, .. } => (slot + u_min as usize) as f64,
            BucketScheme::Geometric { r_min, ratio, .. } => r_min * ratio.powi(slot as i32 + 1),
        }
    }
}

/// Expected confirmation horizon, either in blocks or in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    Blocks(u32),
    Minutes(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRequest {
    pub tx: TxSkeleton,
    pub horizon: Horizon,
}

impl EstimateRequest {
    pub fn in_blocks(tx: TxSkeleton, theta: u32) -> Self {
        EstimateRequest {
            tx,
            horizon: Horizon::Blocks(theta),
        }
    }

    pub fn in_minutes(tx: TxSkeleton, minutes: f64) -> Self {
        EstimateRequest {
            tx,
            horizon: Horizon::Minutes(minutes),
        }
    }

    pub fn blocks(&self) -> Result<u32> {
        match self.horizon {
            Horizon::Blocks(b) if b >= 1 => Ok(b),
            Horizon::Blocks(_) => Err(Error::InvalidInput("block horizon must be at least 1".into())),
            Horizon::Minutes(_) => Err(Error::InvalidInput("this estimator needs a block horizon".into())),
        }
    }

    pub fn minutes(&self) -> Result<f64> {
        match self.horizon {
            Horizon::Minutes(m) if m > 0.0 && m.is_finite() => Ok(m),
            Horizon::Minutes(m) => Err(Error::InvalidInput(format!("minute horizon {m} must be positive"))),
            Horizon::Blocks(_) => Err(Error::InvalidInput("this estimator needs a minute horizon".into())),
        }
    }
}
