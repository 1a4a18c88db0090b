//! Flow/drain estimator.
//!
//! The mempool is treated as a container: recent arrivals give an inflow
//! speed per integer feerate scale, the current mempool gives a volume per
//! scale, and a Poisson block count over the horizon gives the outflow. The
//! estimate is the lowest scale whose higher-feerate inflow plus volume
//! still drains within the horizon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainView, MempoolSnapshot, MAX_BLOCK_WEIGHT};

/// Mean block interval in minutes assumed by the Poisson model.
pub const NOMINAL_BLOCK_MINUTES: f64 = 10.0;

pub const U_MIN: usize = 1;
pub const U_MAX: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BtcFlowConfig {
    /// Weight units confirmed per block.
    pub block_weight: f64,
    /// Confidence parameter; 0.5, 0.8 and 0.9 are the usual
    /// optimistic/standard/cautious settings.
    pub p: f64,
}

impl Default for BtcFlowConfig {
    fn default() -> Self {
        BtcFlowConfig {
            block_weight: MAX_BLOCK_WEIGHT as f64,
            p: 0.8,
        }
    }
}

impl BtcFlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.block_weight > 0.0) {
            return Err(Error::InvalidInput("BLOCK must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidInput(format!("p = {} is outside [0, 1]", self.p)));
        }
        Ok(())
    }
}

/// Inflow speed (weight per minute) and mempool volume (weight) per integer
/// feerate scale. Index `u` holds scale `u`; index 0 is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    inflow: Vec<f64>,
    state: Vec<f64>,
}

impl Default for FlowModel {
    fn default() -> Self {
        FlowModel {
            inflow: vec![0.0; U_MAX + 1],
            state: vec![0.0; U_MAX + 1],
        }
    }
}

impl FlowModel {
    pub fn inflow(&self, u: usize) -> f64 {
        self.inflow[u]
    }

    pub fn state(&self, u: usize) -> f64 {
        self.state[u]
    }

    pub fn set_inflow(&mut self, u: usize, speed: f64) {
        self.inflow[scale_index(u)] = speed;
    }

    pub fn set_state(&mut self, u: usize, volume: f64) {
        self.state[scale_index(u)] = volume;
    }

    /// `I(u) + M(u)` for every scale, accumulated from `u_max` downward.
    pub fn cumulative_demand(&self, minutes: f64) -> Vec<f64> {
        let mut out = vec![0.0; U_MAX + 2];
        let mut inflow = 0.0;
        let mut volume = 0.0;
        for u in (U_MIN..=U_MAX).rev() {
            inflow += self.inflow[u];
            volume += self.state[u];
            out[u] = minutes * inflow + volume;
        }
        out
    }
}

fn scale_index(u: usize) -> usize {
    u.clamp(U_MIN, U_MAX)
}

fn scale_of(feerate: f64) -> usize {
    scale_index(feerate.ceil().max(0.0) as usize)
}

/// Builds the inflow from transactions first seen in the `2 * minutes`
/// window ending at `now` (unix seconds) and the volume from `mempool`.
pub fn build_flows(chain: &ChainView, mempool: &MempoolSnapshot, minutes: f64, now: i64) -> Result<FlowModel> {
    if !(minutes > 0.0) {
        return Err(Error::InvalidInput(format!("horizon of {minutes} minutes must be positive")));
    }
    let mut flows = FlowModel::default();
    let window_minutes = 2.0 * minutes;
    let start = now as f64 - window_minutes * 60.0;
    for tx in chain.transactions() {
        let seen = tx.first_seen_time as f64;
        if seen > start && seen <= now as f64 {
            flows.inflow[scale_of(tx.feerate)] += tx.weight as f64 / window_minutes;
        }
    }
    for e in mempool.entries() {
        flows.state[scale_of(e.feerate)] += e.weight as f64;
    }
    Ok(flows)
}

/// `1 - P(X <= k)` for `X ~ Poisson(lambda)`.
pub fn poisson_survival(lambda: f64, k: u32) -> f64 {
    let mut pmf = (-lambda).exp();
    let mut cdf = pmf;
    for i in 1..=k {
        pmf *= lambda / i as f64;
        cdf += pmf;
    }
    (1.0 - cdf).max(0.0)
}

/// Expected block count over `minutes`: the `c` with
/// `p` in `[1 - P(X <= c), 1 - P(X <= c - 1))`, i.e. the smallest `k` whose
/// survival probability is at most `p`.
pub fn poisson_block_count(minutes: f64, p: f64) -> u32 {
    let lambda = minutes / NOMINAL_BLOCK_MINUTES;
    // survival reaches 0 in floating point well before this bound
    let cap = (10.0 * lambda + 200.0) as u32;
    let mut pmf = (-lambda).exp();
    let mut cdf = pmf;
    let mut k = 0;
    while 1.0 - cdf > p && k < cap {
        k += 1;
        pmf *= lambda / k as f64;
        cdf += pmf;
    }
    k
}

pub fn model_outflow(block_count: u32, config: &BtcFlowConfig) -> f64 {
    block_count as f64 * config.block_weight
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowEstimate {
    /// Integer feerate scale in sat/vB.
    pub feerate: f64,
    /// Zero outflow or even the top scale failing to drain.
    pub low_confidence: bool,
}

/// Scans scales from `u_max` down and returns the lowest scale whose
/// cumulative inflow plus volume is still within `outflow`.
pub fn estimate(flows: &FlowModel, minutes: f64, outflow: f64) -> FlowEstimate {
    if outflow <= 0.0 {
        return FlowEstimate {
            feerate: U_MAX as f64,
            low_confidence: true,
        };
    }
    let demand = flows.cumulative_demand(minutes);
    for u in (U_MIN..=U_MAX).rev() {
        if demand[u] > outflow {
            return if u == U_MAX {
                FlowEstimate {
                    feerate: U_MAX as f64,
                    low_confidence: true,
                }
            } else {
                FlowEstimate {
                    feerate: (u + 1) as f64,
                    low_confidence: false,
                }
            };
        }
    }
    FlowEstimate {
        feerate: U_MIN as f64,
        low_confidence: false,
    }
}

/// Convenience wrapper running the whole procedure for one horizon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BtcFlow {
    pub config: BtcFlowConfig,
}

impl BtcFlow {
    pub fn new(config: BtcFlowConfig) -> Result<Self> {
        config.validate()?;
        Ok(BtcFlow { config })
    }

    pub fn estimate(&self, chain: &ChainView, mempool: &MempoolSnapshot, minutes: f64, now: i64) -> Result<FlowEstimate> {
        let flows = build_flows(chain, mempool, minutes, now)?;
        let outflow = model_outflow(poisson_block_count(minutes, self.config.p), &self.config);
        Ok(estimate(&flows, minutes, outflow))
    }
}
