//! Virtual-block position estimator.
//!
//! The mempool, sorted by feerate, is cut into virtual blocks of `block`
//! weight and slices of `slice` weight. Historical transactions are labelled
//! by whether they confirmed within their virtual block position, and one
//! logistic perceptron per position range learns `hit` from
//! `[feerate, loc_b, loc_s]`. Estimation walks the feerate upward in 0.1 sat/vB
//! steps until the range's model predicts a hit.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::in_mempool_at;
use crate::model::{BucketScheme, ChainView, Height, MempoolEntry, MempoolSnapshot, MAX_BLOCK_WEIGHT};
use crate::nn::{logistic_loss, seeded_rng, Activation, Adam, AdamConfig, Checkpoint, Dense, Module, Tensor};

/// Position ranges with one model each: `(label, first, last)`.
pub const RANGES: [(&str, u32, u32); 4] = [("[1-4]", 1, 4), ("[5-8]", 5, 8), ("[9-12]", 9, 12), ("[13+]", 13, u32::MAX)];

pub fn range_index(position: u32) -> usize {
    RANGES
        .iter()
        .position(|&(_, lo, hi)| (lo..=hi).contains(&position))
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MslpConfig {
    /// Virtual block capacity in weight units.
    pub block: u64,
    /// Slice capacity in weight units; must divide `block`.
    pub slice: u64,
    pub step: f64,
    pub max_steps: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for MslpConfig {
    fn default() -> Self {
        MslpConfig {
            block: MAX_BLOCK_WEIGHT,
            slice: MAX_BLOCK_WEIGHT / 10,
            step: 0.1,
            max_steps: 10_000,
            epochs: 30,
            batch_size: 1000,
            adam: AdamConfig {
                lr: 0.02,
                ..AdamConfig::default()
            },
            seed: 7,
        }
    }
}

impl MslpConfig {
    /// Virtual blocks sized to a chain's own block capacity, rounded down to
    /// a whole number of ten slices.
    pub fn with_block(block: u64) -> Self {
        let slice = (block / 10).max(1);
        MslpConfig {
            block: slice * 10,
            slice,
            ..MslpConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slice == 0 || self.block == 0 || !self.block.is_multiple_of(self.slice) {
            return Err(Error::InvalidInput(format!(
                "slice {} must be a positive divisor of block {}",
                self.slice, self.block
            )));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidInput("search step must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch size must be positive".into()));
        }
        Ok(())
    }

    fn slices_per_block(&self) -> u64 {
        self.block / self.slice
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualPosition {
    pub loc_b: u32,
    pub loc_s: u32,
}

impl VirtualPosition {
    /// Position for `weight` units queued at or above a feerate.
    pub fn from_weight(weight: u64, config: &MslpConfig) -> Self {
        VirtualPosition {
            loc_b: (weight / config.block) as u32 + 1,
            loc_s: (weight / config.slice) as u32 + 1,
        }
    }
}

/// Position of feerate `r` in `mempool`: the weight of members paying at
/// least `r`, floored into blocks and slices, plus one.
pub fn virtual_position(mempool: &MempoolSnapshot, feerate: f64, config: &MslpConfig) -> VirtualPosition {
    let weight: u64 = mempool
        .entries()
        .iter()
        .take_while(|e| e.feerate >= feerate)
        .map(|e| e.weight)
        .sum();
    VirtualPosition::from_weight(weight, config)
}

/// Positions of every entry of a feerate-descending list, tie-aware.
fn entry_positions(entries: &[&MempoolEntry], config: &MslpConfig) -> Vec<VirtualPosition> {
    let mut out = vec![VirtualPosition { loc_b: 1, loc_s: 1 }; entries.len()];
    let mut i = 0;
    let mut above = 0u64;
    while i < entries.len() {
        let mut j = i;
        let mut group = 0u64;
        while j < entries.len() && entries[j].feerate == entries[i].feerate {
            group += entries[j].weight;
            j += 1;
        }
        above += group;
        let pos = VirtualPosition::from_weight(above, config);
        out[i..j].iter_mut().for_each(|p| *p = pos);
        i = j;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MslpInstance {
    pub height: Height,
    pub tx_index: usize,
    pub feerate: f64,
    pub loc_b: u32,
    pub loc_s: u32,
    pub hit: bool,
}

impl MslpInstance {
    pub fn features(&self) -> [f64; 3] {
        [self.feerate, self.loc_b as f64, self.loc_s as f64]
    }
}

/// `hit` iff the virtual block position covers the remaining wait.
pub fn hit_label(loc_b: u32, height: Height, confirm_height: Height) -> bool {
    loc_b as u64 >= confirm_height.saturating_sub(height)
}

/// One instance per (height below `tip`, transaction waiting at that height
/// that later confirms).
pub fn build_training_instances(chain: &ChainView, tip: Height, config: &MslpConfig) -> Result<Vec<MslpInstance>> {
    config.validate()?;
    let txs: Vec<_> = chain.transactions().collect();
    let mut out = Vec::new();
    for block in chain.blocks().iter().filter(|b| b.height < tip) {
        let h = block.height;
        let mut waiting: Vec<(usize, MempoolEntry)> = txs
            .iter()
            .enumerate()
            .filter(|(_, tx)| in_mempool_at(tx, h))
            .map(|(i, tx)| {
                (
                    i,
                    MempoolEntry {
                        tx_index: i,
                        feerate: tx.feerate,
                        weight: tx.weight,
                        entry_height: tx.entry_height,
                    },
                )
            })
            .collect();
        waiting.sort_by(|a, b| b.1.feerate.total_cmp(&a.1.feerate));
        let refs: Vec<&MempoolEntry> = waiting.iter().map(|(_, e)| e).collect();
        let positions = entry_positions(&refs, config);
        for ((i, e), pos) in waiting.iter().zip(positions) {
            if let Some(c) = txs[*i].confirm_height {
                out.push(MslpInstance {
                    height: h,
                    tx_index: *i,
                    feerate: e.feerate,
                    loc_b: pos.loc_b,
                    loc_s: pos.loc_s,
                    hit: hit_label(pos.loc_b, h, c),
                });
            }
        }
    }
    Ok(out)
}

/// Logistic perceptron over standardised `[r, loc_b, loc_s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeModel {
    pub layer: Dense,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub instances: usize,
}

impl RangeModel {
    fn standardize(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| (x[k] - self.mean[k]) / self.std[k])
    }

    pub fn activation(&self, x: [f64; 3]) -> f64 {
        self.layer.forward(&self.standardize(x)).expect("three inputs")[0]
    }

    pub fn predict(&self, x: [f64; 3]) -> bool {
        self.activation(x) >= 0.0
    }

    pub fn accuracy(&self, instances: &[MslpInstance]) -> f64 {
        let right = instances.iter().filter(|i| self.predict(i.features()) == i.hit).count();
        right as f64 / instances.len().max(1) as f64
    }

    fn fit(instances: &[&MslpInstance], config: &MslpConfig, seed: u64) -> Result<Self> {
        let n = instances.len() as f64;
        let mut mean = [0.0; 3];
        for i in instances {
            for (m, x) in mean.iter_mut().zip(i.features()) {
                *m += x / n;
            }
        }
        let mut std = [0.0; 3];
        for i in instances {
            for k in 0..3 {
                std[k] += (i.features()[k] - mean[k]).powi(2) / n;
            }
        }
        let std = std.map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        let mut rng = seeded_rng(seed);
        let mut model = RangeModel {
            layer: Dense::new(3, 1, Activation::Linear, &mut rng),
            mean,
            std,
            instances: instances.len(),
        };
        let xs: Vec<[f64; 3]> = instances.iter().map(|i| model.standardize(i.features())).collect();
        let ys: Vec<f64> = instances.iter().map(|i| if i.hit { 1.0 } else { 0.0 }).collect();
        let mut adam = Adam::new(&model.layer, config.adam);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let logits: Vec<f64> = batch.iter().map(|&i| model.layer.forward(&xs[i]).expect("three inputs")[0]).collect();
                let labels: Vec<f64> = batch.iter().map(|&i| ys[i]).collect();
                let (loss, dz) = logistic_loss(&logits, &labels);
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged("perceptron loss is not finite".into()));
                }
                let mut grads = model.layer.zeroed();
                for (&i, g) in batch.iter().zip(&dz) {
                    grads.w.add_outer(&[*g], &xs[i]);
                    grads.b.data_mut()[0] += g;
                }
                adam.step(&mut model.layer, &grads)?;
            }
        }
        Ok(model)
    }
}

/// The four range models plus the configuration they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Mslp {
    pub config: MslpConfig,
    pub models: [Option<RangeModel>; 4],
}

pub fn train(instances: &[MslpInstance], config: &MslpConfig) -> Result<Mslp> {
    config.validate()?;
    let mut models: [Option<RangeModel>; 4] = Default::default();
    for (r, slot) in models.iter_mut().enumerate() {
        let subset: Vec<&MslpInstance> = instances.iter().filter(|i| range_index(i.loc_b) == r).collect();
        if !subset.is_empty() {
            *slot = Some(RangeModel::fit(&subset, config, config.seed.wrapping_add(r as u64))?);
        }
    }
    Ok(Mslp {
        config: *config,
        models,
    })
}

/// Smallest `seed + k * step`, `k = 0..=max_steps`, accepted by `accepts`.
pub fn search_feerate(seed: f64, step: f64, max_steps: u32, mut accepts: impl FnMut(f64) -> bool) -> Result<f64> {
    for k in 0..=max_steps {
        let r = seed + k as f64 * step;
        if accepts(r) {
            return Ok(r);
        }
    }
    Err(Error::MaxFeerateReached { steps: max_steps })
}

/// The pseudo instance `[r', θ, loc_s]` the search starts from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSeed {
    pub feerate: f64,
    pub loc_s: u32,
    pub block_full: bool,
}

/// Seed for target `theta`, or the out-of-boundary error when `theta` is past
/// the deepest virtual block.
pub fn search_seed(mempool: &MempoolSnapshot, theta: u32, config: &MslpConfig) -> Result<SearchSeed> {
    let entries: Vec<&MempoolEntry> = mempool.entries().iter().collect();
    let positions = entry_positions(&entries, config);
    let max_position = positions.last().map_or(1, |p| p.loc_b);
    if theta == 0 {
        return Err(Error::InvalidInput("target must be at least one block".into()));
    }
    if theta > max_position {
        return Err(Error::OutOfBoundary { theta, max_position });
    }
    if theta == max_position {
        // the block is not full: start from zero at the actual last slice
        let loc_s = positions.last().map_or(1, |p| p.loc_s);
        return Ok(SearchSeed {
            feerate: 0.0,
            loc_s,
            block_full: false,
        });
    }
    let last_slice = (theta as u64 * config.slices_per_block()) as u32;
    let feerate = entries
        .iter()
        .zip(&positions)
        .filter(|(_, p)| p.loc_s <= last_slice)
        .map(|(e, _)| e.feerate)
        .last()
        .unwrap_or(0.0);
    Ok(SearchSeed {
        feerate,
        loc_s: last_slice,
        block_full: true,
    })
}

impl Mslp {
    pub fn model_for(&self, theta: u32) -> Result<&RangeModel> {
        let r = range_index(theta);
        self.models[r]
            .as_ref()
            .ok_or_else(|| Error::UntrainedModel(RANGES[r].0.to_string()))
    }

    pub fn estimate(&self, theta: u32, mempool: &MempoolSnapshot) -> Result<f64> {
        let model = self.model_for(theta)?;
        let seed = search_seed(mempool, theta, &self.config)?;
        search_feerate(seed.feerate, self.config.step, self.config.max_steps, |r| {
            model.predict([r, theta as f64, seed.loc_s as f64])
        })
    }

    /// Tensors per trained range `r`: `range{r}.w`, `range{r}.b`,
    /// `range{r}.mean`, `range{r}.std`, `range{r}.instances`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({
            "engine": "mslp",
            "config": self.config,
            "ranges": RANGES.iter().map(|r| r.0).collect::<Vec<_>>(),
        }));
        for (r, m) in self.models.iter().enumerate() {
            if let Some(m) = m {
                ck.add_module(&format!("range{r}"), &m.layer);
                let vec = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec()).expect("vector shape");
                ck.params.push((format!("range{r}.mean"), vec(&m.mean)));
                ck.params.push((format!("range{r}.std"), vec(&m.std)));
                ck.params.push((format!("range{r}.instances"), vec(&[m.instances as f64])));
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: MslpConfig = serde_json::from_value(ck.metadata["config"].clone())?;
        let mut models: [Option<RangeModel>; 4] = Default::default();
        for (r, slot) in models.iter_mut().enumerate() {
            let prefix = format!("range{r}");
            let Some(mean) = ck.get(&format!("{prefix}.mean")) else {
                continue;
            };
            let fetch3 = |t: &Tensor| -> Result<[f64; 3]> {
                t.data()
                    .try_into()
                    .map_err(|_| Error::Checkpoint(format!("{prefix} statistics must have three values")))
            };
            let std = ck
                .get(&format!("{prefix}.std"))
                .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.std")))?;
            let instances = ck
                .get(&format!("{prefix}.instances"))
                .and_then(|t| t.data().first().copied())
                .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}.instances")))?;
            let mut layer = Dense::zeros(3, 1, Activation::Linear);
            ck.load_module(&prefix, &mut layer)?;
            *slot = Some(RangeModel {
                layer,
                mean: fetch3(mean)?,
                std: fetch3(std)?,
                instances: instances as usize,
            });
        }
        Ok(Mslp { config, models })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Trains on every height below `tip`.
pub fn fit(chain: &ChainView, tip: Height, config: &MslpConfig) -> Result<Mslp> {
    let instances = build_training_instances(chain, tip, config)?;
    train(&instances, config)
}

/// A snapshot holding only the given `(feerate, weight)` pairs.
pub fn snapshot_of(height: Height, txs: &[(f64, u64)]) -> Result<MempoolSnapshot> {
    let entries = txs
        .iter()
        .enumerate()
        .map(|(i, &(feerate, weight))| MempoolEntry {
            tx_index: i,
            feerate,
            weight,
            entry_height: height,
        })
        .collect();
    MempoolSnapshot::from_entries(height, entries, BucketScheme::geometric())
}
