use crate::bcore::{BCore, BCoreConfig, BCoreSnapshot, BlockEvents};
use crate::btcflow::{BtcFlow, BtcFlowConfig};
use crate::error::{Error, Result};
use crate::fenn::{training_queries, FeatureScaling, FennConfig, FennDataset, FennModel, Query, Variant};
use crate::model::{ChainView, Height, MempoolSnapshot, Transaction};
use crate::mslp::{self, Mslp, MslpConfig};
use crate::nn::Adam;

use serde::{Deserialize, Serialize};

use super::{feerate_to_fee, floored_feerate_to_fee};

/// Blocks an engine may learn from: `start..=tip`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainWindow {
    pub start: Height,
    pub tip: Height,
}

/// One test transaction as seen at its entry height.
pub struct QueryView<'a> {
    /// The chain as known at `mempool.height()`.
    pub chain: &'a ChainView,
    pub mempool: &'a MempoolSnapshot,
    pub tx: &'a Transaction,
    pub theta: u32,
}

impl QueryView<'_> {
    pub fn height(&self) -> Height {
        self.mempool.height()
    }
}

pub trait FeeEngine: Send {
    fn name(&self) -> String;

    /// (Re)trains on `chain`, which holds nothing past `window.tip`.
    fn fit(&mut self, chain: &ChainView, window: TrainWindow) -> Result<()>;

    /// Fee in satoshi.
    fn estimate(&mut self, query: &QueryView<'_>) -> Result<f64>;

    /// Highest block height the fitted state depends on.
    fn fitted_through(&self) -> Option<Height>;
}

pub const ENGINE_NAMES: [&str; 9] = [
    "btcflow",
    "bcore",
    "mslp",
    "fenn-lstm",
    "fenn-adv",
    "fenn-self",
    "fenn-wht",
    "fenn-lstmadv",
    "oracle",
];

/// Builds engines from names such as `bcore`, `fenn-adv` or `fenn-adv-memtx`.
/// `all` expands to every estimator except the oracle.
pub fn engines_from_names(
    names: &[String],
    block_weight: u64,
    fenn: &FennConfig,
    refit: Refit,
) -> Result<Vec<Box<dyn FeeEngine>>> {
    let mut out: Vec<Box<dyn FeeEngine>> = Vec::new();
    for name in names {
        let name = name.trim().to_ascii_lowercase();
        if name == "all" {
            for n in &ENGINE_NAMES[..ENGINE_NAMES.len() - 1] {
                out.extend(engines_from_names(&[n.to_string()], block_weight, fenn, refit)?);
            }
            continue;
        }
        let engine: Box<dyn FeeEngine> = match name.as_str() {
            "btcflow" => Box::new(BtcFlowEngine::new(BtcFlowConfig {
                block_weight: block_weight as f64,
                ..BtcFlowConfig::default()
            })?),
            "bcore" => Box::new(BCoreEngine::new(BCoreConfig::default())?),
            "mslp" => Box::new(MslpEngine::new(MslpConfig::with_block(block_weight))),
            "oracle" => Box::new(OracleEngine),
            other => {
                let mut parts = other.split('-');
                let (Some("fenn"), Some(variant)) = (parts.next(), parts.next()) else {
                    return Err(Error::InvalidInput(format!("unknown engine {other:?}")));
                };
                let mut config = FennConfig {
                    variant: variant.parse::<Variant>()?,
                    ..*fenn
                };
                if let Some(ablation) = parts.next() {
                    config.ablation = ablation.parse()?;
                }
                if parts.next().is_some() {
                    return Err(Error::InvalidInput(format!("unknown engine {other:?}")));
                }
                Box::new(FennEngine::new(config, refit))
            }
        };
        out.push(engine);
    }
    Ok(out)
}

/// Flow model queried with `θ × 10` minutes.
pub struct BtcFlowEngine {
    model: BtcFlow,
}

impl BtcFlowEngine {
    pub fn new(config: BtcFlowConfig) -> Result<Self> {
        Ok(BtcFlowEngine {
            model: BtcFlow::new(config)?,
        })
    }
}

impl FeeEngine for BtcFlowEngine {
    fn name(&self) -> String {
        "btcflow".into()
    }

    fn fit(&mut self, _chain: &ChainView, _window: TrainWindow) -> Result<()> {
        Ok(())
    }

    fn estimate(&mut self, q: &QueryView<'_>) -> Result<f64> {
        let minutes = q.theta as f64 * 10.0;
        let est = self.model.estimate(q.chain, q.mempool, minutes, q.tx.first_seen_time)?;
        Ok(floored_feerate_to_fee(q.tx.weight, est.feerate))
    }

    fn fitted_through(&self) -> Option<Height> {
        None
    }
}

/// Decayed bucket statistics, replayed up to the block before each query.
pub struct BCoreEngine {
    config: BCoreConfig,
    state: BCore,
    events: Option<(Height, BlockEvents)>,
    snapshot: Option<(Height, BCoreSnapshot)>,
}

impl BCoreEngine {
    pub fn new(config: BCoreConfig) -> Result<Self> {
        Ok(BCoreEngine {
            state: BCore::new(config)?,
            config,
            events: None,
            snapshot: None,
        })
    }
}

impl FeeEngine for BCoreEngine {
    fn name(&self) -> String {
        "bcore".into()
    }

    fn fit(&mut self, _chain: &ChainView, _window: TrainWindow) -> Result<()> {
        Ok(())
    }

    fn estimate(&mut self, q: &QueryView<'_>) -> Result<f64> {
        let h = q.height();
        if self.snapshot.as_ref().is_none_or(|(at, _)| *at != h) {
            self.snapshot = None;
            if self.state.tip().is_some_and(|t| t >= h) {
                self.state = BCore::new(self.config)?;
            }
            if self.events.as_ref().is_none_or(|(at, _)| *at != h) {
                self.events = Some((h, BlockEvents::index(q.chain)));
            }
            let (_, events) = self.events.as_ref().expect("indexed above");
            if h > 0 {
                self.state.advance_to(q.chain, events, h - 1)?;
            }
            self.snapshot = Some((h, self.state.snapshot(q.mempool)?));
        }
        let (_, snapshot) = self.snapshot.as_ref().expect("built above");
        let est = snapshot.estimate(q.theta)?;
        Ok(feerate_to_fee(q.tx.weight, est.feerate))
    }

    fn fitted_through(&self) -> Option<Height> {
        self.state.tip()
    }
}

pub struct MslpEngine {
    config: MslpConfig,
    model: Option<Mslp>,
    tip: Option<Height>,
}

impl MslpEngine {
    pub fn new(config: MslpConfig) -> Self {
        MslpEngine {
            config,
            model: None,
            tip: None,
        }
    }
}

impl FeeEngine for MslpEngine {
    fn name(&self) -> String {
        "mslp".into()
    }

    fn fit(&mut self, chain: &ChainView, window: TrainWindow) -> Result<()> {
        self.model = Some(mslp::fit(chain, window.tip, &self.config)?);
        self.tip = Some(window.tip);
        Ok(())
    }

    fn estimate(&mut self, q: &QueryView<'_>) -> Result<f64> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::UntrainedModel("mslp has not been fitted".into()))?;
        Ok(feerate_to_fee(q.tx.weight, model.estimate(q.theta, q.mempool)?))
    }

    fn fitted_through(&self) -> Option<Height> {
        self.tip
    }
}

/// Update passes run on an already fitted network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refit {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for Refit {
    fn default() -> Self {
        Refit { epochs: 10, lr: 1e-4 }
    }
}

/// Neural estimator; later fits continue from the current weights and
/// optimiser state.
pub struct FennEngine {
    pub config: FennConfig,
    pub refit: Refit,
    pub model: Option<FennModel>,
    adam: Option<Adam>,
    tip: Option<Height>,
}

impl FennEngine {
    pub fn new(config: FennConfig, refit: Refit) -> Self {
        FennEngine {
            config,
            refit,
            model: None,
            adam: None,
            tip: None,
        }
    }
}

impl FeeEngine for FennEngine {
    fn name(&self) -> String {
        match self.config.ablation {
            crate::fenn::Ablation::Full => format!("fenn-{}", self.config.variant),
            a => format!("fenn-{}-{a}", self.config.variant),
        }
    }

    fn fit(&mut self, chain: &ChainView, window: TrainWindow) -> Result<()> {
        let queries: Vec<Query> = training_queries(chain, window.tip)
            .into_iter()
            .filter(|q| q.height >= window.start)
            .collect();
        let data = FennDataset::from_queries(chain, &queries, &self.config.scheme)?;
        match (&mut self.model, &mut self.adam) {
            (Some(model), Some(adam)) => {
                adam.config.lr = self.refit.lr;
                model.train_epochs_with(&data, self.refit.epochs, adam)?;
            }
            _ => {
                if data.is_empty() {
                    return Err(Error::InsufficientData("no training instances".into()));
                }
                let mut model = FennModel::new(&self.config, FeatureScaling::fit(&data))?;
                let mut adam = Adam::new(&model, self.config.adam);
                model.train_epochs_with(&data, self.config.epochs, &mut adam)?;
                self.model = Some(model);
                self.adam = Some(adam);
            }
        }
        self.tip = Some(window.tip);
        Ok(())
    }

    fn estimate(&mut self, q: &QueryView<'_>) -> Result<f64> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::UntrainedModel("fenn has not been fitted".into()))?;
        model.estimate_fee(q.chain, q.mempool, &q.tx.skeleton(), q.theta)
    }

    fn fitted_through(&self) -> Option<Height> {
        self.tip
    }
}

/// Answers with the true fee; a harness fixture.
pub struct OracleEngine;

impl FeeEngine for OracleEngine {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn fit(&mut self, _chain: &ChainView, _window: TrainWindow) -> Result<()> {
        Ok(())
    }

    fn estimate(&mut self, q: &QueryView<'_>) -> Result<f64> {
        Ok(q.tx.fee as f64)
    }

    fn fitted_through(&self) -> Option<Height> {
        None
    }
}
