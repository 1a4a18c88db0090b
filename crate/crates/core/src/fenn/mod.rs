//! Neural fee estimator over transaction, mempool and block-sequence features.
//!
//! A request is described by three groups: the transaction vector
//! `[inputs, outputs, size, weight, version, θ]`, the mempool's per-bucket
//! transaction counts, and the network features of the last three blocks.
//! The block sequence goes through one of five sequence modules, the pooled
//! result is concatenated with the other two groups and a 64-8-1 head predicts
//! `ln(1 + fee)`.

mod features;
mod model;

pub use features::{
    build_training_set, extract_features, log_counts, mempool_features, network_sequence, training_queries,
    transaction_features, FeatureScaling, FennDataset, Query, RawContext, RawFeatures, RawInstance, Standardizer,
};
pub use model::{gradient_check, FennModel, SeqModule, TrainReport};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BucketScheme;
use crate::nn::AdamConfig;

/// Trailing blocks in the network sequence.
pub const SEQ_LEN: usize = 3;
pub const TX_FEATURES: usize = 6;
pub const NET_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// LSTM final hidden state.
    Lstm,
    /// Additive attention over the raw block features.
    Adv,
    /// Scaled dot-product self-attention.
    SelfAttn,
    /// LSTM followed by weighted attention over its hidden states.
    Wht,
    /// LSTM followed by additive attention over its hidden states.
    LstmAdv,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Lstm, Variant::Adv, Variant::SelfAttn, Variant::Wht, Variant::LstmAdv];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::Adv => "adv",
            Variant::SelfAttn => "self",
            Variant::Wht => "wht",
            Variant::LstmAdv => "lstmadv",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant {s:?}")))
    }
}

/// Which feature groups reach the head; masked groups are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    Tx,
    MemTx,
    BloTx,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Tx, Ablation::MemTx, Ablation::BloTx, Ablation::Full];

    pub fn uses_mempool(self) -> bool {
        matches!(self, Ablation::MemTx | Ablation::Full)
    }

    pub fn uses_network(self) -> bool {
        matches!(self, Ablation::BloTx | Ablation::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Tx => "tx",
            Ablation::MemTx => "memtx",
            Ablation::BloTx => "blotx",
            Ablation::Full => "full",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown ablation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FennConfig {
    pub variant: Variant,
    pub ablation: Ablation,
    /// Width of the sequence module.
    pub seq_hidden: usize,
    pub head_hidden: [usize; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Use `o ⊙ tanh(c_{t-1})` as the LSTM output.
    pub literal_lstm: bool,
    pub scheme: BucketScheme,
}

impl Default for FennConfig {
    fn default() -> Self {
        FennConfig {
            variant: Variant::Adv,
            ablation: Ablation::Full,
            seq_hidden: 64,
            head_hidden: [64, 8],
            epochs: 100,
            batch_size: 1000,
            adam: AdamConfig::default(),
            seed: 7,
            literal_lstm: false,
            scheme: BucketScheme::geometric(),
        }
    }
}

impl FennConfig {
    pub fn new(variant: Variant) -> Self {
        FennConfig {
            variant,
            ..FennConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.seq_hidden == 0 || self.head_hidden.contains(&0) {
            return Err(Error::InvalidInput("layer widths must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Trains with the given feature groups only.
pub fn ablate(data: &FennDataset, config: &FennConfig, ablation: Ablation) -> Result<(FennModel, TrainReport)> {
    FennModel::fit(data, &FennConfig { ablation, ..*config })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("gru".parse::<Variant>().is_err());
    }
}
