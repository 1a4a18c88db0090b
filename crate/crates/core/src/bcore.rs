//! Decayed bucket-statistics estimator in the style of the reference node.
//!
//! Confirmations are tracked per feerate bucket with an exponential decay
//! per block. An estimate scans buckets from the highest feerate down,
//! grouping buckets until enough decayed samples exist, and keeps going while
//! each group confirms within the target often enough. The answer is the
//! average feerate of the bucket holding the median sample of the last group
//! that passed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BucketScheme, ChainView, Height, MempoolSnapshot};

/// A tracked target range and its per-block decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub name: &'static str,
    /// Largest target in blocks; also the longest confirmation counted.
    pub max_target: u32,
    pub decay: f64,
}

impl HorizonSpec {
    /// Decay whose half-life equals the horizon length.
    pub fn half_life(name: &'static str, max_target: u32) -> Self {
        HorizonSpec {
            name,
            max_target,
            decay: 0.5f64.powf(1.0 / max_target as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Era {
    /// One horizon of 24 blocks, decay 0.998, evictions ignored.
    Pre15,
    /// Short/medium/long horizons of 12/48/1008 blocks; evictions count as failures.
    Post15,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResultMode {
    /// Highest estimate among the horizons that cover the target.
    Conservative,
    /// Estimate of the shortest horizon that covers the target.
    Economical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BCoreConfig {
    pub era: Era,
    pub mode: ResultMode,
    /// Minimum decayed sample count per group.
    pub p1: f64,
    /// Minimum success ratio per group.
    pub p2: f64,
    pub scheme: BucketScheme,
}

impl Default for BCoreConfig {
    fn default() -> Self {
        BCoreConfig {
            era: Era::Post15,
            mode: ResultMode::Conservative,
            p1: 10.0,
            p2: 0.95,
            scheme: BucketScheme::geometric(),
        }
    }
}

impl BCoreConfig {
    pub fn horizons(&self) -> Vec<HorizonSpec> {
        match self.era {
            Era::Pre15 => vec![HorizonSpec {
                name: "pre15",
                max_target: 24,
                decay: 0.998,
            }],
            Era::Post15 => vec![
                HorizonSpec::half_life("short", 12),
                HorizonSpec::half_life("medium", 48),
                HorizonSpec::half_life("long", 1008),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if !(self.p1 > 0.0) {
            return Err(Error::InvalidInput("p1 must be positive".into()));
        }
        if !(self.p2 > 0.0 && self.p2 <= 1.0) {
            return Err(Error::InvalidInput("p2 must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Decayed statistics per bucket slot, materialised at a tip height.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketStats {
    pub scheme: BucketScheme,
    pub max_target: u32,
    pub tip: Height,
    /// `txCtAvg(u)`
    pub tx_ct_avg: Vec<f64>,
    /// `avg(u)`, the decayed feerate sum.
    pub avg: Vec<f64>,
    /// `confAvg(u, θ)` at index `[θ][u]`; row 0 is unused.
    pub conf_avg: Vec<Vec<f64>>,
    /// `txUnCt(u, θ)` at index `[θ][u]`; row 0 is unused.
    pub tx_un_ct: Vec<Vec<f64>>,
}

impl BucketStats {
    pub fn bucket_count(&self) -> usize {
        self.tx_ct_avg.len()
    }

    fn check_target(&self, theta: u32) -> Result<()> {
        if theta == 0 || theta > self.max_target {
            return Err(Error::InvalidInput(format!(
                "target {theta} is outside the tracked range 1..={}",
                self.max_target
            )));
        }
        Ok(())
    }

    /// Runs the high-to-low group scan for target `theta`.
    pub fn estimate(&self, theta: u32, p1: f64, p2: f64) -> Result<f64> {
        self.check_target(theta)?;
        let t = theta as usize;
        estimate_from_columns(&self.tx_ct_avg, &self.avg, &self.conf_avg[t], &self.tx_un_ct[t], p1, p2)
            .map(|g| g.feerate)
    }
}

/// The outcome of a scan: the passing group `[low_slot, high_slot]` and the
/// bucket the estimate was read from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupEstimate {
    pub feerate: f64,
    pub low_slot: usize,
    pub high_slot: usize,
    pub median_slot: usize,
}

/// The scan over one target's columns, all indexed by bucket slot.
pub fn estimate_from_columns(
    tx_ct_avg: &[f64],
    avg: &[f64],
    conf_avg: &[f64],
    tx_un_ct: &[f64],
    p1: f64,
    p2: f64,
) -> Result<GroupEstimate> {
    let n = tx_ct_avg.len();
    let mut passing: Option<(usize, usize)> = None;
    let mut high = n.checked_sub(1);
    let (mut count, mut confirmed, mut waiting) = (0.0, 0.0, 0.0);
    for slot in (0..n).rev() {
        count += tx_ct_avg[slot];
        confirmed += conf_avg[slot];
        waiting += tx_un_ct[slot];
        if count < p1 {
            continue;
        }
        let gamma = confirmed / (count + waiting);
        if gamma < p2 {
            break;
        }
        passing = Some((slot, high.expect("slot exists")));
        high = slot.checked_sub(1);
        (count, confirmed, waiting) = (0.0, 0.0, 0.0);
    }
    let (low, high) = passing.ok_or_else(|| Error::InsufficientData("no bucket group met both thresholds".into()))?;
    let total: f64 = tx_ct_avg[low..=high].iter().sum();
    let half = total / 2.0;
    let mut cumulative = 0.0;
    for slot in low..=high {
        cumulative += tx_ct_avg[slot];
        if tx_ct_avg[slot] > 0.0 && cumulative >= half {
            return Ok(GroupEstimate {
                feerate: avg[slot] / tx_ct_avg[slot],
                low_slot: low,
                high_slot: high,
                median_slot: slot,
            });
        }
    }
    unreachable!("a passing group has positive total count")
}

/// Replays blocks into decayed per-bucket counters for one horizon.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    horizon: HorizonSpec,
    scheme: BucketScheme,
    count_evictions: bool,
    tip: Option<Height>,
    tx_ct_avg: Vec<f64>,
    avg: Vec<f64>,
    /// Decayed confirmations by exact interval `d` in `0..=max_target`.
    conf_by_interval: Vec<Vec<f64>>,
    /// Decayed evictions by blocks waited, capped at `max_target`.
    evicted_by_wait: Vec<Vec<f64>>,
}

impl StatsAccumulator {
    pub fn new(horizon: HorizonSpec, scheme: BucketScheme, count_evictions: bool) -> Self {
        let n = scheme.bucket_count();
        let rows = horizon.max_target as usize + 1;
        StatsAccumulator {
            horizon,
            scheme,
            count_evictions,
            tip: None,
            tx_ct_avg: vec![0.0; n],
            avg: vec![0.0; n],
            conf_by_interval: vec![vec![0.0; n]; rows],
            evicted_by_wait: vec![vec![0.0; n]; rows],
        }
    }

    pub fn horizon(&self) -> HorizonSpec {
        self.horizon
    }

    pub fn tip(&self) -> Option<Height> {
        self.tip
    }

    /// Decays everything by one block, then adds this block's confirmations
    /// `(feerate, interval)` and evictions `(feerate, waited)`.
    pub fn process_block(
        &mut self,
        height: Height,
        confirmations: impl IntoIterator<Item = (f64, u64)>,
        evictions: impl IntoIterator<Item = (f64, u64)>,
    ) -> Result<()> {
        if self.tip.is_some_and(|t| height <= t) {
            return Err(Error::InvalidInput(format!("block {height} replayed out of order")));
        }
        self.tip = Some(height);
        let a = self.horizon.decay;
        let decay_all = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= a);
        decay_all(&mut self.tx_ct_avg);
        decay_all(&mut self.avg);
        self.conf_by_interval.iter_mut().for_each(decay_all);
        self.evicted_by_wait.iter_mut().for_each(decay_all);

        let max = self.horizon.max_target as u64;
        for (feerate, interval) in confirmations {
            if interval > max {
                continue;
            }
            let slot = self.scheme.slot_of(feerate)?;
            self.tx_ct_avg[slot] += 1.0;
            self.avg[slot] += feerate;
            self.conf_by_interval[interval as usize][slot] += 1.0;
        }
        if self.count_evictions {
            for (feerate, waited) in evictions {
                let slot = self.scheme.slot_of(feerate)?;
                self.evicted_by_wait[waited.min(max) as usize][slot] += 1.0;
            }
        }
        Ok(())
    }

    /// Materialises the statistics against the mempool at the current tip.
    pub fn stats(&self, mempool: &MempoolSnapshot) -> Result<BucketStats> {
        let tip = self
            .tip
            .ok_or_else(|| Error::InsufficientData("no blocks have been replayed".into()))?;
        let n = self.scheme.bucket_count();
        let rows = self.horizon.max_target as usize + 1;

        let mut conf_avg = vec![vec![0.0; n]; rows];
        let mut running = self.conf_by_interval[0].clone();
        for theta in 1..rows {
            for (r, c) in running.iter_mut().zip(&self.conf_by_interval[theta]) {
                *r += c;
            }
            conf_avg[theta].clone_from(&running);
        }

        // waited[d][u]: mempool members that have waited exactly d blocks (capped)
        let mut waited = vec![vec![0.0; n]; rows];
        for e in mempool.entries() {
            let d = tip.saturating_sub(e.entry_height).min(rows as u64 - 1) as usize;
            waited[d][self.scheme.slot_of(e.feerate)?] += 1.0;
        }
        let mut tx_un_ct = vec![vec![0.0; n]; rows];
        let mut tail = vec![0.0; n];
        for theta in (1..rows).rev() {
            for u in 0..n {
                tail[u] += waited[theta][u] + self.evicted_by_wait[theta][u];
            }
            tx_un_ct[theta].clone_from(&tail);
        }

        Ok(BucketStats {
            scheme: self.scheme,
            max_target: self.horizon.max_target,
            tip,
            tx_ct_avg: self.tx_ct_avg.clone(),
            avg: self.avg.clone(),
            conf_avg,
            tx_un_ct,
        })
    }
}

/// Replays `chain` up to the mempool's height for a single horizon.
pub fn accumulate_stats(
    chain: &ChainView,
    mempool: &MempoolSnapshot,
    horizon: HorizonSpec,
    scheme: BucketScheme,
    count_evictions: bool,
) -> Result<BucketStats> {
    if chain.is_empty() {
        return Err(Error::InsufficientData("chain has no blocks".into()));
    }
    let mut acc = StatsAccumulator::new(horizon, scheme, count_evictions);
    let events = BlockEvents::index(chain);
    for block in chain.blocks().iter().take_while(|b| b.height <= mempool.height()) {
        events.replay_into(chain, block.height, &mut acc)?;
    }
    acc.stats(mempool)
}

/// Confirmation and eviction indices per block height.
#[derive(Debug, Clone, Default)]
pub struct BlockEvents {
    confirmed: BTreeMap<Height, Vec<usize>>,
    evicted: BTreeMap<Height, Vec<usize>>,
}

impl BlockEvents {
    pub fn index(chain: &ChainView) -> Self {
        let mut evicted: BTreeMap<Height, Vec<usize>> = BTreeMap::new();
        for (i, tx) in chain.transactions().enumerate() {
            if let (true, Some(l)) = (tx.is_evicted(), tx.leave_height) {
                evicted.entry(l).or_default().push(i);
            }
        }
        BlockEvents {
            confirmed: chain.confirmations_by_height(),
            evicted,
        }
    }

    pub fn replay_into(&self, chain: &ChainView, height: Height, acc: &mut StatsAccumulator) -> Result<()> {
        let tx = |i: &usize| chain.transaction_at(*i).expect("indexed from this chain");
        let confirmations = self.confirmed.get(&height).into_iter().flatten().map(|i| {
            let t = tx(i);
            (t.feerate, t.confirm_height.expect("confirmed") - t.entry_height)
        });
        let evictions = self.evicted.get(&height).into_iter().flatten().map(|i| {
            let t = tx(i);
            (t.feerate, height - t.entry_height)
        });
        acc.process_block(height, confirmations, evictions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BCoreEstimate {
    pub feerate: f64,
    pub horizon: &'static str,
}

/// Multi-horizon estimator that can be advanced block by block.
#[derive(Debug, Clone)]
pub struct BCore {
    config: BCoreConfig,
    accumulators: Vec<StatsAccumulator>,
}

impl BCore {
    pub fn new(config: BCoreConfig) -> Result<Self> {
        config.validate()?;
        let evictions = config.era == Era::Post15;
        let accumulators = config
            .horizons()
            .into_iter()
            .map(|h| StatsAccumulator::new(h, config.scheme, evictions))
            .collect();
        Ok(BCore { config, accumulators })
    }

    pub fn config(&self) -> &BCoreConfig {
        &self.config
    }

    pub fn tip(&self) -> Option<Height> {
        self.accumulators[0].tip()
    }

    /// Replays every block of `chain` above the current tip up to `height`.
    pub fn advance_to(&mut self, chain: &ChainView, events: &BlockEvents, height: Height) -> Result<()> {
        let from = self.tip();
        for block in chain.blocks() {
            if block.height > height {
                break;
            }
            if from.is_some_and(|t| block.height <= t) {
                continue;
            }
            for acc in &mut self.accumulators {
                events.replay_into(chain, block.height, acc)?;
            }
        }
        Ok(())
    }

    pub fn fit(chain: &ChainView, config: BCoreConfig) -> Result<Self> {
        let mut bcore = BCore::new(config)?;
        if let Some(tip) = chain.tip_height() {
            bcore.advance_to(chain, &BlockEvents::index(chain), tip)?;
        }
        Ok(bcore)
    }

    /// Estimate for `theta` blocks against the mempool at the current tip.
    pub fn estimate(&self, theta: u32, mempool: &MempoolSnapshot) -> Result<BCoreEstimate> {
        if theta == 0 {
            return Err(Error::InvalidInput("target must be at least one block".into()));
        }
        self.snapshot(mempool)?.estimate(theta)
    }

    /// Statistics of every horizon against `mempool`, reusable across targets.
    pub fn snapshot(&self, mempool: &MempoolSnapshot) -> Result<BCoreSnapshot> {
        Ok(BCoreSnapshot {
            config: self.config,
            stats: self
                .accumulators
                .iter()
                .map(|a| Ok((a.horizon(), a.stats(mempool)?)))
                .collect::<Result<_>>()?,
        })
    }
}

/// Materialised statistics of a [`BCore`] at one height.
#[derive(Debug, Clone)]
pub struct BCoreSnapshot {
    config: BCoreConfig,
    stats: Vec<(HorizonSpec, BucketStats)>,
}

impl BCoreSnapshot {
    pub fn estimate(&self, theta: u32) -> Result<BCoreEstimate> {
        if theta == 0 {
            return Err(Error::InvalidInput("target must be at least one block".into()));
        }
        let applicable: Vec<&(HorizonSpec, BucketStats)> =
            self.stats.iter().filter(|(h, _)| h.max_target >= theta).collect();
        if applicable.is_empty() {
            return Err(Error::InvalidInput(format!("no horizon covers a target of {theta} blocks")));
        }
        let mut best: Option<BCoreEstimate> = None;
        let mut last_err = None;
        for (horizon, stats) in applicable {
            match stats.estimate(theta, self.config.p1, self.config.p2) {
                Ok(feerate) => {
                    let est = BCoreEstimate {
                        feerate,
                        horizon: horizon.name,
                    };
                    match self.config.mode {
                        ResultMode::Economical => return Ok(est),
                        ResultMode::Conservative => {
                            if best.is_none_or(|b| est.feerate > b.feerate) {
                                best = Some(est);
                            }
                        }
                    }
                }
                Err(e @ Error::InsufficientData(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        best.ok_or_else(|| last_err.expect("at least one horizon was tried"))
    }
}
