//! Seeded synthetic chain generator.
//!
//! Blocks arrive with exponential inter-arrival times. Transactions arrive as
//! a (optionally cyclically modulated) Poisson stream and pick a log-normal
//! feerate whose location follows a slow drift and the backlog the sender
//! observes. Each block is packed strictly by feerate, highest first, until
//! the next candidate no longer fits.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compute_feerate, Block, ChainView, Height, Transaction, WEIGHT_PER_VBYTE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeerateModel {
    /// Location of `ln(feerate)` at the first block.
    pub log_mean: f64,
    pub log_sd: f64,
    /// Change of the location per block.
    pub drift_per_block: f64,
    /// Location shift per unit of `ln(1 + backlog / block_weight_limit)`.
    pub congestion_sensitivity: f64,
    /// Location shift applied to consolidation transactions.
    pub consolidation_shift: f64,
    pub min_feerate: f64,
    pub max_feerate: f64,
}

impl Default for FeerateModel {
    fn default() -> Self {
        FeerateModel {
            log_mean: 2.5,
            log_sd: 0.6,
            drift_per_block: 0.0,
            congestion_sensitivity: 0.5,
            consolidation_shift: -0.7,
            min_feerate: 1.0,
            max_feerate: 2000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_blocks: usize,
    pub start_height: Height,
    pub start_time: i64,
    /// Seconds.
    pub mean_block_interval: f64,
    pub block_weight_limit: u64,
    /// Mean arrivals per minute.
    pub tx_arrival_rate: f64,
    /// Relative amplitude of the sinusoidal arrival-rate cycle, in `[0, 1)`.
    pub arrival_amplitude: f64,
    /// Period of the arrival-rate cycle in seconds.
    pub arrival_period: f64,
    pub feerate: FeerateModel,
    /// Share of segregated-witness transactions.
    pub segwit_share: f64,
    pub difficulty: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_blocks: 225,
            start_height: 620_000,
            start_time: 1_583_000_000,
            mean_block_interval: 600.0,
            block_weight_limit: 180_000,
            tx_arrival_rate: 22.0,
            arrival_amplitude: 0.3,
            arrival_period: 43_200.0,
            feerate: FeerateModel::default(),
            segwit_share: 0.6,
            difficulty: 1.5e13,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("synth config: {what}")));
        if !(self.mean_block_interval > 0.0) {
            return bad("mean_block_interval must be positive");
        }
        if self.block_weight_limit == 0 {
            return bad("block_weight_limit must be positive");
        }
        if !(self.tx_arrival_rate > 0.0) {
            return bad("tx_arrival_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.arrival_amplitude) {
            return bad("arrival_amplitude must lie in [0, 1)");
        }
        if !(self.arrival_period > 0.0) {
            return bad("arrival_period must be positive");
        }
        let f = &self.feerate;
        if !(f.log_sd > 0.0 && f.min_feerate > 0.0 && f.max_feerate > f.min_feerate) {
            return bad("feerate distribution parameters are invalid");
        }
        if !(0.0..=1.0).contains(&self.segwit_share) {
            return bad("segwit_share must lie in [0, 1]");
        }
        if !(self.difficulty > 0.0) {
            return bad("difficulty must be positive");
        }
        Ok(())
    }

    fn rate_per_second(&self, t: f64) -> f64 {
        self.tx_arrival_rate / 60.0 * (1.0 + self.arrival_amplitude * (2.0 * PI * t / self.arrival_period).sin())
    }
}

struct Pending {
    index: usize,
    feerate: f64,
    weight: u64,
}

pub fn synth_generate(config: &SynthConfig) -> Result<ChainView> {
    config.validate()?;
    if config.n_blocks == 0 {
        return ChainView::new(vec![], vec![]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let block_gap = Exp::new(1.0 / config.mean_block_interval).expect("positive rate");
    let max_rate = config.tx_arrival_rate / 60.0 * (1.0 + config.arrival_amplitude);
    let arrival_gap = Exp::new(max_rate).expect("positive rate");
    let noise = Normal::new(0.0, config.feerate.log_sd).expect("positive sd");

    let mut blocks: Vec<Block> = Vec::with_capacity(config.n_blocks);
    let mut txs: Vec<Transaction> = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();
    let mut backlog_weight = 0u64;

    let first_interval = config.mean_block_interval.round() as i64;
    blocks.push(Block {
        height: config.start_height,
        timestamp: config.start_time,
        interval: first_interval,
        size: 80,
        difficulty: config.difficulty,
        total_weight: 0,
        tx_count: 0,
        mean_feerate: 0.0,
    });

    let mut next_arrival = arrival_gap.sample(&mut rng);
    let mut block_clock = 0i64;

    for k in 1..config.n_blocks {
        let prev = blocks.last().expect("first block pushed above");
        let prev_height = prev.height;
        let gap = (block_gap.sample(&mut rng).round() as i64).max(1);
        let next_block_clock = block_clock + gap;

        let location = config.feerate.log_mean
            + config.feerate.drift_per_block * (k - 1) as f64
            + config.feerate.congestion_sensitivity
                * (1.0 + backlog_weight as f64 / config.block_weight_limit as f64).ln();

        while next_arrival < next_block_clock as f64 {
            // seconds since the first block
            let clock = next_arrival;
            next_arrival = clock + arrival_gap.sample(&mut rng);
            if rng.random::<f64>() * max_rate > config.rate_per_second(clock) {
                continue;
            }
            let first_seen = config.start_time + clock.floor() as i64;
            let tx = draw_transaction(&mut rng, config, location, &noise, txs.len(), first_seen, prev_height)?;
            pending.push(Pending {
                index: txs.len(),
                feerate: tx.feerate,
                weight: tx.weight,
            });
            txs.push(tx);
        }

        block_clock = next_block_clock;
        let height = prev_height + 1;
        let timestamp = config.start_time + block_clock;

        pending.sort_by(|a, b| b.feerate.total_cmp(&a.feerate).then(a.index.cmp(&b.index)));
        let mut used = 0u64;
        let mut take = 0usize;
        for p in &pending {
            if used + p.weight > config.block_weight_limit {
                break;
            }
            used += p.weight;
            take += 1;
        }
        let included: Vec<Pending> = pending.drain(..take).collect();
        let mut size = 80u64;
        let mut feerate_sum = 0.0;
        for p in &included {
            let tx = &mut txs[p.index];
            tx.confirm_height = Some(height);
            tx.leave_height = Some(height);
            tx.confirm_time = Some(timestamp);
            size += tx.size;
            feerate_sum += tx.feerate;
        }
        backlog_weight = pending.iter().map(|p| p.weight).sum();
        blocks.push(Block {
            height,
            timestamp,
            interval: gap,
            size,
            difficulty: config.difficulty,
            total_weight: used,
            tx_count: included.len() as u64,
            mean_feerate: if included.is_empty() {
                0.0
            } else {
                feerate_sum / included.len() as f64
            },
        });
    }
    ChainView::new(blocks, txs)
}

fn draw_transaction(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    location: f64,
    noise: &Normal<f64>,
    ordinal: usize,
    first_seen: i64,
    entry_height: Height,
) -> Result<Transaction> {
    let consolidation = rng.random::<f64>() < 0.03;
    let inputs: u32 = if consolidation {
        rng.random_range(8..=40)
    } else {
        let mut n = 1;
        while n < 12 && rng.random::<f64>() < 0.35 {
            n += 1;
        }
        n
    };
    let outputs: u32 = if consolidation {
        1
    } else {
        match rng.random::<f64>() {
            u if u < 0.25 => 1,
            u if u < 0.9 => 2,
            _ => rng.random_range(3..=25),
        }
    };
    let segwit = rng.random::<f64>() < config.segwit_share;
    let (size, weight) = if segwit {
        let base = 10 + 41 * inputs as u64 + 31 * outputs as u64;
        let witness = 2 + 107 * inputs as u64;
        (base + witness, 4 * base + witness)
    } else {
        let size = 10 + 148 * inputs as u64 + 34 * outputs as u64;
        (size, 4 * size)
    };
    let version = if rng.random::<f64>() < 0.85 { 2 } else { 1 };

    let shift = if consolidation {
        config.feerate.consolidation_shift
    } else {
        0.0
    };
    let target = (location + shift + noise.sample(rng))
        .exp()
        .clamp(config.feerate.min_feerate, config.feerate.max_feerate);
    let fee = (target * weight as f64 / WEIGHT_PER_VBYTE).round() as u64;
    let txid = format!("{:016x}{:016x}{:08x}", rng.random::<u64>(), rng.random::<u64>(), ordinal);
    let tx = Transaction::new(txid, version, size, weight, inputs, outputs, fee, first_seen, entry_height)?;
    debug_assert!((tx.feerate - compute_feerate(fee, weight)?).abs() < 1e-12);
    Ok(tx)
}
