//! Chain replay benchmark: train/test splits, fee metrics and retraining cadence.

mod bench;
mod engines;

pub use bench::{
    retrain_frequency_experiment, run_benchmark, BenchmarkOptions, BenchmarkReport, EngineRow, LatencyStats,
    PolicyResult, Prediction, RETRAIN_POLICIES,
};
pub use engines::{
    engines_from_names, BCoreEngine, BtcFlowEngine, FeeEngine, FennEngine, MslpEngine, OracleEngine, QueryView,
    Refit, TrainWindow, ENGINE_NAMES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainView, Height};

/// Fee in satoshi for `weight` weight units at `feerate` sat/vB.
pub fn feerate_to_fee(weight: u64, feerate: f64) -> f64 {
    weight as f64 / 4.0 * feerate
}

/// Like [`feerate_to_fee`] after dropping the fractional part of the
/// feerate, as done for the flow model's answers.
pub fn floored_feerate_to_fee(weight: u64, feerate: f64) -> f64 {
    feerate_to_fee(weight, feerate.floor())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    /// Percent. `NaN` when every truth value is zero.
    pub mape: f64,
    pub n: usize,
    /// Pairs whose zero truth value was left out of the MAPE.
    pub zero_truth: usize,
}

pub fn metrics(truth: &[f64], predictions: &[f64]) -> Result<Metrics> {
    if truth.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData("metrics need at least one pair".into()));
    }
    let n = truth.len() as f64;
    let mse = truth.iter().zip(predictions).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / n;
    let mut ape = 0.0;
    let mut counted = 0usize;
    for (y, p) in truth.iter().zip(predictions) {
        if *y != 0.0 {
            ape += ((y - p) / y).abs();
            counted += 1;
        }
    }
    Ok(Metrics {
        rmse: mse.sqrt(),
        mape: if counted == 0 { f64::NAN } else { 100.0 * ape / counted as f64 },
        n: truth.len(),
        zero_truth: truth.len() - counted,
    })
}

/// Consecutive training and test block ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_blocks: u64,
    pub test_blocks: u64,
    /// Blocks skipped at the start of the chain.
    pub offset: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_blocks: 180,
            test_blocks: 45,
            offset: 0,
        }
    }
}

/// Absolute heights of a split on one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitHeights {
    pub train_start: Height,
    pub train_end: Height,
    pub test_start: Height,
    pub test_end: Height,
}

impl SplitSpec {
    pub fn new(train_blocks: u64, test_blocks: u64) -> Self {
        SplitSpec {
            train_blocks,
            test_blocks,
            offset: 0,
        }
    }

    pub fn resolve(&self, chain: &ChainView) -> Result<SplitHeights> {
        if self.train_blocks == 0 || self.test_blocks == 0 {
            return Err(Error::InvalidInput("train and test ranges must be non-empty".into()));
        }
        let have = chain.blocks().len() as u64;
        let need = self.offset + self.train_blocks + self.test_blocks;
        if need > have {
            return Err(Error::InsufficientData(format!(
                "split needs {need} blocks, chain has {have}"
            )));
        }
        let height = |i: u64| chain.blocks()[i as usize].height;
        Ok(SplitHeights {
            train_start: height(self.offset),
            train_end: height(self.offset + self.train_blocks - 1),
            test_start: height(self.offset + self.train_blocks),
            test_end: height(need - 1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fee_conversion_examples() {
        assert_eq!(feerate_to_fee(400, 10.0), 1000.0);
        assert_eq!(floored_feerate_to_fee(400, 10.9), 1000.0);
        assert_eq!(feerate_to_fee(4, 1.0), 1.0);
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&[5.0, 7.0], &[5.0, 7.0]).unwrap();
        assert_eq!((m.rmse, m.mape), (0.0, 0.0));
        let m = metrics(&[100.0], &[90.0]).unwrap();
        assert!((m.rmse - 10.0).abs() < 1e-12 && (m.mape - 10.0).abs() < 1e-12);
        let m = metrics(&[100.0, 100.0], &[100.0, 200.0]).unwrap();
        assert!((m.rmse - 5000f64.sqrt()).abs() < 1e-12);
        assert!((m.mape - 50.0).abs() < 1e-12);
    }

    #[test]
    fn zero_truth_is_excluded_from_mape() {
        let m = metrics(&[0.0, 100.0], &[5.0, 110.0]).unwrap();
        assert_eq!(m.zero_truth, 1);
        assert!((m.mape - 10.0).abs() < 1e-12);
        assert!(metrics(&[0.0], &[1.0]).unwrap().mape.is_nan());
        assert!(matches!(metrics(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!(metrics(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_non_negative(pairs in prop::collection::vec((1.0f64..1e6, 0.0f64..1e6), 1..50)) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = metrics(&y, &p).unwrap();
            prop_assert!(m.rmse >= 0.0 && m.mape >= 0.0);
        }

        #[test]
        fn integer_fee_conversion_is_exact(w in 1u64..4_000_000, r in 0u32..10_000) {
            let fee = feerate_to_fee(w, r as f64);
            prop_assert_eq!(fee * 4.0, (w * r as u64) as f64);
        }
    }
}
