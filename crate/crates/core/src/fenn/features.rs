use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NET_FEATURES, SEQ_LEN, TX_FEATURES};
use crate::error::{Error, Result};
use crate::ingest::reconstruct_mempool;
use crate::model::{BucketScheme, ChainView, Height, MempoolSnapshot, TxSkeleton};

/// `[inputs, outputs, size, weight, version, θ]`, with every count except
/// the version passed through `ln(1 + x)`.
pub fn transaction_features(tx: &TxSkeleton, theta: u32) -> [f64; TX_FEATURES] {
    [
        (tx.inputs as f64).ln_1p(),
        (tx.outputs as f64).ln_1p(),
        (tx.size as f64).ln_1p(),
        (tx.weight as f64).ln_1p(),
        tx.version as f64,
        (theta as f64).ln_1p(),
    ]
}

/// Transaction count per bucket of `scheme`.
pub fn mempool_features(mempool: &MempoolSnapshot, scheme: &BucketScheme) -> Result<Vec<f64>> {
    let counts = if mempool.scheme() == scheme {
        mempool.bucket_counts().to_vec()
    } else {
        mempool.with_scheme(*scheme)?.bucket_counts().to_vec()
    };
    Ok(counts.into_iter().map(|c| c as f64).collect())
}

/// Network features of the `SEQ_LEN` blocks ending at `height`, oldest first.
pub fn network_sequence(chain: &ChainView, height: Height) -> Result<Vec<[f64; NET_FEATURES]>> {
    let short = || Error::InsufficientHistory {
        height,
        needed: SEQ_LEN,
    };
    let end = chain.block_index(height).ok_or_else(short)?;
    let start = (end + 1).checked_sub(SEQ_LEN).ok_or_else(short)?;
    Ok(chain.blocks()[start..=end].iter().map(|b| b.network_features()).collect())
}

/// Raw (unscaled) feature groups for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub tx: [f64; TX_FEATURES],
    pub mempool: Vec<f64>,
    pub sequence: Vec<[f64; NET_FEATURES]>,
}

/// Features for `tx` targeting `theta` blocks, with the sequence ending at the
/// mempool's height.
pub fn extract_features(
    chain: &ChainView,
    mempool: &MempoolSnapshot,
    tx: &TxSkeleton,
    theta: u32,
    scheme: &BucketScheme,
) -> Result<RawFeatures> {
    Ok(RawFeatures {
        tx: transaction_features(tx, theta),
        mempool: mempool_features(mempool, scheme)?,
        sequence: network_sequence(chain, mempool.height())?,
    })
}

/// Mempool and block-sequence features shared by every request at one height.
#[derive(Debug, Clone, PartialEq)]
pub struct RawContext {
    pub height: Height,
    pub mempool: Vec<f64>,
    pub sequence: Vec<[f64; NET_FEATURES]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawInstance {
    pub context: usize,
    /// Index into the chain's transactions, when the request is a known one.
    pub tx_index: Option<usize>,
    pub tx: [f64; TX_FEATURES],
    pub fee: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FennDataset {
    pub contexts: Vec<RawContext>,
    pub instances: Vec<RawInstance>,
}

/// A request to featurise: `tx` asked at `height` for `theta` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub tx_index: Option<usize>,
    pub tx: TxSkeleton,
    pub theta: u32,
    pub height: Height,
    pub fee: u64,
}

impl FennDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Featurises `queries`; those without a full block sequence are skipped.
    pub fn from_queries(chain: &ChainView, queries: &[Query], scheme: &BucketScheme) -> Result<Self> {
        let mut by_height: BTreeMap<Height, usize> = BTreeMap::new();
        let mut data = FennDataset::default();
        for q in queries {
            let context = match by_height.get(&q.height) {
                Some(&c) => c,
                None => {
                    let sequence = match network_sequence(chain, q.height) {
                        Ok(s) => s,
                        Err(Error::InsufficientHistory { .. }) => continue,
                        Err(e) => return Err(e),
                    };
                    let mempool = reconstruct_mempool(chain, q.height, *scheme)?;
                    data.contexts.push(RawContext {
                        height: q.height,
                        mempool: mempool_features(&mempool, scheme)?,
                        sequence,
                    });
                    by_height.insert(q.height, data.contexts.len() - 1);
                    data.contexts.len() - 1
                }
            };
            data.instances.push(RawInstance {
                context,
                tx_index: q.tx_index,
                tx: transaction_features(&q.tx, q.theta),
                fee: q.fee,
            });
        }
        Ok(data)
    }
}

/// Every transaction confirmed at or below `tip`, asked at its entry height
/// for its realised interval.
pub fn training_queries(chain: &ChainView, tip: Height) -> Vec<Query> {
    chain
        .transactions()
        .enumerate()
        .filter_map(|(i, tx)| {
            let c = tx.confirm_height.filter(|&c| c <= tip)?;
            Some(Query {
                tx_index: Some(i),
                tx: tx.skeleton(),
                theta: (c - tx.entry_height) as u32,
                height: tx.entry_height,
                fee: tx.fee,
            })
        })
        .collect()
}

pub fn build_training_set(chain: &ChainView, tip: Height, scheme: &BucketScheme) -> Result<FennDataset> {
    FennDataset::from_queries(chain, &training_queries(chain, tip), scheme)
}

/// Per-column mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Standardizer {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn fit<'a>(width: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0.0;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for row in rows {
            n += 1.0;
            for k in 0..width {
                let d = row[k] - mean[k];
                mean[k] += d / n;
                m2[k] += d * (row[k] - mean[k]);
            }
        }
        let std = m2
            .into_iter()
            .map(|v| {
                let s = if n > 0.0 { (v / n).sqrt() } else { 0.0 };
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Input and target scaling fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub tx: Standardizer,
    /// Applied to `ln(1 + count)`.
    pub mempool: Standardizer,
    pub network: Standardizer,
    /// Mean and deviation of `ln(1 + fee)`.
    pub target_mean: f64,
    pub target_std: f64,
}

impl FeatureScaling {
    pub fn identity(buckets: usize) -> Self {
        FeatureScaling {
            tx: Standardizer::identity(TX_FEATURES),
            mempool: Standardizer::identity(buckets),
            network: Standardizer::identity(NET_FEATURES),
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    pub fn fit(data: &FennDataset) -> Self {
        let buckets = data.contexts.first().map_or(0, |c| c.mempool.len());
        let logs: Vec<Vec<f64>> = data.contexts.iter().map(|c| log_counts(&c.mempool)).collect();
        let targets: Vec<f64> = data.instances.iter().map(|i| (i.fee as f64).ln_1p()).collect();
        let t = Standardizer::fit(1, targets.iter().map(std::slice::from_ref));
        FeatureScaling {
            tx: Standardizer::fit(TX_FEATURES, data.instances.iter().map(|i| &i.tx[..])),
            mempool: Standardizer::fit(buckets, logs.iter().map(|r| &r[..])),
            network: Standardizer::fit(
                NET_FEATURES,
                data.contexts.iter().flat_map(|c| c.sequence.iter().map(|r| &r[..])),
            ),
            target_mean: t.mean[0],
            target_std: t.std[0],
        }
    }

    pub fn scale_target(&self, fee: u64) -> f64 {
        ((fee as f64).ln_1p() - self.target_mean) / self.target_std
    }

    /// Inverse of [`FeatureScaling::scale_target`], clamped at zero.
    pub fn unscale_target(&self, y: f64) -> f64 {
        (y * self.target_std + self.target_mean).exp_m1().max(0.0)
    }
}

pub fn log_counts(counts: &[f64]) -> Vec<f64> {
    counts.iter().map(|c| c.ln_1p()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Block, Transaction};

    fn block(height: Height) -> Block {
        Block {
            height,
            timestamp: 600 * height as i64,
            interval: 600 + height as i64,
            size: 1000 + height,
            difficulty: 2.0,
            total_weight: 4000 + height,
            tx_count: height,
            mean_feerate: 0.5 * height as f64,
        }
    }

    #[test]
    fn transaction_vector_logs_the_counts() {
        let tx = TxSkeleton {
            version: 2,
            size: 380,
            weight: 1520,
            inputs: 2,
            outputs: 2,
        };
        let l = |x: f64| x.ln_1p();
        assert_eq!(transaction_features(&tx, 3), [l(2.0), l(2.0), l(380.0), l(1520.0), 2.0, l(3.0)]);
    }

    #[test]
    fn sequence_rows_match_blocks() {
        let chain = ChainView::new((10..=14).map(block).collect(), vec![]).unwrap();
        let seq = network_sequence(&chain, 13).unwrap();
        assert_eq!(seq.len(), SEQ_LEN);
        for (row, h) in seq.iter().zip(11..=13) {
            assert_eq!(*row, block(h).network_features());
        }
        assert!(matches!(
            network_sequence(&chain, 11),
            Err(Error::InsufficientHistory { height: 11, needed: 3 })
        ));
    }

    #[test]
    fn empty_mempool_is_zero() {
        let chain = ChainView::new((10..=14).map(block).collect(), vec![]).unwrap();
        let m = reconstruct_mempool(&chain, 12, BucketScheme::geometric()).unwrap();
        let f = mempool_features(&m, &BucketScheme::geometric()).unwrap();
        assert_eq!(f.len(), 189);
        assert!(f.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn training_set_counts_eligible() {
        let txs = vec![
            Transaction::new("a", 2, 100, 400, 1, 1, 500, 0, 12).unwrap().confirmed_at(14, 0).unwrap(),
            Transaction::new("b", 2, 100, 400, 1, 1, 500, 0, 10).unwrap().confirmed_at(13, 0).unwrap(),
            Transaction::new("c", 2, 100, 400, 1, 1, 500, 0, 13).unwrap(),
        ];
        let chain = ChainView::new((10..=14).map(block).collect(), txs).unwrap();
        let data = build_training_set(&chain, 14, &BucketScheme::geometric()).unwrap();
        // b lacks history, c is unconfirmed
        assert_eq!(data.len(), 1);
        assert_eq!(data.instances[0].tx[5], 2f64.ln_1p());
        assert_eq!(data.instances[0].fee, 500);
        assert_eq!(data.contexts[0].mempool.iter().sum::<f64>(), 2.0);
        let none = build_training_set(&chain, 12, &BucketScheme::geometric()).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(2, rows.iter().map(|r| &r[..]));
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[4.0, 5.0]), vec![2.0, 0.0]);
    }
}
