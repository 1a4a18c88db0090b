use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{log_counts, FeatureScaling, FennDataset, RawContext, Standardizer};
use super::{Ablation, FennConfig, Variant, NET_FEATURES, TX_FEATURES};
use crate::error::{Error, Result};
use crate::model::{ChainView, MempoolSnapshot, TxSkeleton};
use crate::nn::{
    grad_check, seeded_rng, Activation, Adam, AdditiveAttention, AdditiveCache, Checkpoint, Dense, DenseCache,
    GradCheckReport, Lstm, LstmCache, Module, SelfAttention, SelfCache, Tensor, WeightedAttention, WeightedCache,
};

/// The block-sequence encoder of each variant.
#[derive(Debug, Clone, PartialEq)]
pub enum SeqModule {
    Lstm(Lstm),
    Adv(AdditiveAttention),
    SelfAttn(SelfAttention),
    Wht(Lstm, WeightedAttention),
    LstmAdv(Lstm, AdditiveAttention),
}

pub enum SeqCache {
    Lstm(LstmCache, usize),
    Adv(AdditiveCache),
    SelfAttn(SelfCache),
    Wht(LstmCache, WeightedCache),
    LstmAdv(LstmCache, AdditiveCache),
}

impl SeqModule {
    pub fn new(variant: Variant, hidden: usize, literal_lstm: bool, rng: &mut impl Rng) -> Self {
        let lstm = |rng: &mut _| {
            let mut l = Lstm::new(NET_FEATURES, hidden, rng);
            l.literal_output = literal_lstm;
            l
        };
        match variant {
            Variant::Lstm => SeqModule::Lstm(lstm(rng)),
            Variant::Adv => SeqModule::Adv(AdditiveAttention::new(NET_FEATURES, hidden, rng)),
            Variant::SelfAttn => SeqModule::SelfAttn(SelfAttention::new(NET_FEATURES, hidden, hidden, rng)),
            Variant::Wht => {
                let l = lstm(rng);
                SeqModule::Wht(l, WeightedAttention::new(hidden, rng))
            }
            Variant::LstmAdv => {
                let l = lstm(rng);
                SeqModule::LstmAdv(l, AdditiveAttention::new(hidden, hidden, rng))
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SeqModule::Lstm(l) => l.hidden(),
            SeqModule::Adv(a) => a.width(),
            SeqModule::SelfAttn(s) => s.w_v.rows(),
            SeqModule::Wht(l, _) | SeqModule::LstmAdv(l, _) => l.hidden(),
        }
    }

    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<(Vec<f64>, SeqCache)> {
        Ok(match self {
            SeqModule::Lstm(l) => {
                let (out, cache) = l.forward_cached(seq)?;
                (out.h_final, SeqCache::Lstm(cache, seq.len()))
            }
            SeqModule::Adv(a) => {
                let (out, cache) = a.forward_cached(seq)?;
                (out.pooled, SeqCache::Adv(cache))
            }
            SeqModule::SelfAttn(s) => {
                let (out, cache) = s.forward_cached(seq)?;
                (out.pooled, SeqCache::SelfAttn(cache))
            }
            SeqModule::Wht(l, w) => {
                let (h, lc) = l.forward_cached(seq)?;
                let (out, wc) = w.forward_cached(&h.hidden)?;
                (out, SeqCache::Wht(lc, wc))
            }
            SeqModule::LstmAdv(l, a) => {
                let (h, lc) = l.forward_cached(seq)?;
                let (out, ac) = a.forward_cached(&h.hidden)?;
                (out.pooled, SeqCache::LstmAdv(lc, ac))
            }
        })
    }

    pub fn backward(&self, cache: &SeqCache, dout: &[f64], grads: &mut SeqModule) {
        match (self, cache, grads) {
            (SeqModule::Lstm(l), SeqCache::Lstm(c, n), SeqModule::Lstm(g)) => {
                let mut dh = vec![vec![0.0; l.hidden()]; *n];
                dh[n - 1].copy_from_slice(dout);
                l.backward(c, &dh, g);
            }
            (SeqModule::Adv(a), SeqCache::Adv(c), SeqModule::Adv(g)) => {
                a.backward(c, dout, g);
            }
            (SeqModule::SelfAttn(s), SeqCache::SelfAttn(c), SeqModule::SelfAttn(g)) => {
                s.backward(c, dout, g);
            }
            (SeqModule::Wht(l, w), SeqCache::Wht(lc, wc), SeqModule::Wht(gl, gw)) => {
                let dh = w.backward(wc, dout, gw);
                l.backward(lc, &dh, gl);
            }
            (SeqModule::LstmAdv(l, a), SeqCache::LstmAdv(lc, ac), SeqModule::LstmAdv(gl, ga)) => {
                let dh = a.backward(ac, dout, ga);
                l.backward(lc, &dh, gl);
            }
            _ => unreachable!("cache and gradient buffer come from the same module"),
        }
    }
}

fn prefixed<'a>(prefix: &str, params: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    params.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

impl Module for SeqModule {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        match self {
            SeqModule::Lstm(l) => prefixed("lstm", l.named_params()),
            SeqModule::Adv(a) => prefixed("additive", a.named_params()),
            SeqModule::SelfAttn(s) => prefixed("self", s.named_params()),
            SeqModule::Wht(l, w) => {
                let mut p = prefixed("lstm", l.named_params());
                p.extend(prefixed("weighted", w.named_params()));
                p
            }
            SeqModule::LstmAdv(l, a) => {
                let mut p = prefixed("lstm", l.named_params());
                p.extend(prefixed("additive", a.named_params()));
                p
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            SeqModule::Lstm(l) => l.params_mut(),
            SeqModule::Adv(a) => a.params_mut(),
            SeqModule::SelfAttn(s) => s.params_mut(),
            SeqModule::Wht(l, w) => {
                let mut p = l.params_mut();
                p.extend(w.params_mut());
                p
            }
            SeqModule::LstmAdv(l, a) => {
                let mut p = l.params_mut();
                p.extend(a.params_mut());
                p
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch, on the scaled log target.
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
struct PreparedContext {
    mempool: Vec<f64>,
    sequence: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct PreparedInstance {
    context: usize,
    tx: Vec<f64>,
    target: f64,
}

/// Scaled, masked inputs ready for the graph.
#[derive(Debug, Clone)]
pub struct Prepared {
    contexts: Vec<PreparedContext>,
    instances: Vec<PreparedInstance>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Forward state for one context inside a batch.
struct ContextPass {
    seq_out: Vec<f64>,
    seq_cache: Option<SeqCache>,
    /// First head layer's contribution from the mempool and sequence columns.
    z: Vec<f64>,
}

struct InstancePass {
    z1: Vec<f64>,
    a1: Vec<f64>,
    c2: DenseCache,
    c3: DenseCache,
    y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FennModel {
    pub config: FennConfig,
    pub scaling: FeatureScaling,
    pub seq: SeqModule,
    pub head1: Dense,
    pub head2: Dense,
    pub head3: Dense,
}

impl Module for FennModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut p = prefixed("seq", self.seq.named_params());
        p.extend(prefixed("head1", self.head1.named_params()));
        p.extend(prefixed("head2", self.head2.named_params()));
        p.extend(prefixed("head3", self.head3.named_params()));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.seq.params_mut();
        p.extend(self.head1.params_mut());
        p.extend(self.head2.params_mut());
        p.extend(self.head3.params_mut());
        p
    }
}

impl FennModel {
    /// Randomly initialised model for `buckets` mempool columns.
    pub fn new(config: &FennConfig, scaling: FeatureScaling) -> Result<Self> {
        config.validate()?;
        let buckets = config.scheme.bucket_count();
        if scaling.mempool.mean.len() != buckets {
            return Err(Error::ShapeMismatch(format!(
                "mempool scaling has {} columns, scheme has {buckets} buckets",
                scaling.mempool.mean.len()
            )));
        }
        let mut rng = seeded_rng(config.seed);
        let seq = SeqModule::new(config.variant, config.seq_hidden, config.literal_lstm, &mut rng);
        let inputs = TX_FEATURES + buckets + seq.output_dim();
        let [h1, h2] = config.head_hidden;
        Ok(FennModel {
            config: *config,
            scaling,
            head1: Dense::new(inputs, h1, Activation::Relu, &mut rng),
            head2: Dense::new(h1, h2, Activation::Relu, &mut rng),
            head3: Dense::new(h2, 1, Activation::Linear, &mut rng),
            seq,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn ablation(&self) -> Ablation {
        self.config.ablation
    }

    fn buckets(&self) -> usize {
        self.scaling.mempool.mean.len()
    }

    fn prepare_context(&self, c: &RawContext) -> PreparedContext {
        let ablation = self.config.ablation;
        PreparedContext {
            mempool: if ablation.uses_mempool() {
                self.scaling.mempool.apply(&log_counts(&c.mempool))
            } else {
                Vec::new()
            },
            sequence: if ablation.uses_network() {
                c.sequence.iter().map(|r| self.scaling.network.apply(r)).collect()
            } else {
                Vec::new()
            },
        }
    }

    pub fn prepare(&self, data: &FennDataset) -> Result<Prepared> {
        if let Some(c) = data.contexts.iter().find(|c| c.mempool.len() != self.buckets()) {
            return Err(Error::ShapeMismatch(format!(
                "context at height {} has {} buckets, model expects {}",
                c.height,
                c.mempool.len(),
                self.buckets()
            )));
        }
        Ok(Prepared {
            contexts: data.contexts.iter().map(|c| self.prepare_context(c)).collect(),
            instances: data
                .instances
                .iter()
                .map(|i| PreparedInstance {
                    context: i.context,
                    tx: self.scaling.tx.apply(&i.tx),
                    target: self.scaling.scale_target(i.fee),
                })
                .collect(),
        })
    }

    fn context_pass(&self, c: &PreparedContext, keep_cache: bool) -> Result<ContextPass> {
        let mut z = vec![0.0; self.head1.outputs()];
        if !c.mempool.is_empty() {
            self.head1.w.matvec_cols_acc(&c.mempool, TX_FEATURES, &mut z);
        }
        let (seq_out, seq_cache) = if c.sequence.is_empty() {
            (Vec::new(), None)
        } else {
            let (out, cache) = self.seq.forward(&c.sequence)?;
            self.head1.w.matvec_cols_acc(&out, TX_FEATURES + self.buckets(), &mut z);
            (out, keep_cache.then_some(cache))
        };
        Ok(ContextPass { seq_out, seq_cache, z })
    }

    fn instance_pass(&self, ctx: &ContextPass, tx: &[f64]) -> Result<InstancePass> {
        let mut z1 = self.head1.b.data().to_vec();
        for (a, b) in z1.iter_mut().zip(&ctx.z) {
            *a += b;
        }
        self.head1.w.matvec_cols_acc(tx, 0, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&z| self.head1.activation.apply(z)).collect();
        let (a2, c2) = self.head2.forward_cached(&a1)?;
        let (y, c3) = self.head3.forward_cached(&a2)?;
        Ok(InstancePass {
            z1,
            a1,
            c2,
            c3,
            y: y[0],
        })
    }

    /// Mean squared error over `batch`, accumulating gradients when asked.
    fn batch_loss(&self, prep: &Prepared, batch: &[usize], mut grads: Option<&mut FennModel>) -> Result<f64> {
        let mut slots: Vec<(usize, ContextPass, Vec<f64>)> = Vec::new();
        let mut slot_of = std::collections::HashMap::new();
        let keep = grads.is_some();
        let mut passes = Vec::with_capacity(batch.len());
        for &i in batch {
            let inst = &prep.instances[i];
            let slot = match slot_of.get(&inst.context) {
                Some(&s) => s,
                None => {
                    let pass = self.context_pass(&prep.contexts[inst.context], keep)?;
                    slots.push((inst.context, pass, vec![0.0; self.head1.outputs()]));
                    slot_of.insert(inst.context, slots.len() - 1);
                    slots.len() - 1
                }
            };
            passes.push((slot, self.instance_pass(&slots[slot].1, &inst.tx)?));
        }
        let n = batch.len() as f64;
        let loss = batch
            .iter()
            .zip(&passes)
            .map(|(&i, (_, p))| (p.y - prep.instances[i].target).powi(2))
            .sum::<f64>()
            / n;
        let Some(g) = grads.as_deref_mut() else {
            return Ok(loss);
        };
        for (&i, (slot, p)) in batch.iter().zip(&passes) {
            let inst = &prep.instances[i];
            let dy = 2.0 * (p.y - inst.target) / n;
            let da2 = self.head3.backward(&p.c3, &[dy], &mut g.head3);
            let da1 = self.head2.backward(&p.c2, &da2, &mut g.head2);
            let dz1: Vec<f64> = da1
                .iter()
                .zip(&p.a1)
                .map(|(d, &a)| d * self.head1.activation.derivative_from_output(a))
                .collect();
            debug_assert_eq!(p.z1.len(), dz1.len());
            g.head1.w.add_outer_cols(&dz1, &inst.tx, 0);
            for (b, d) in g.head1.b.data_mut().iter_mut().zip(&dz1) {
                *b += d;
            }
            for (acc, d) in slots[*slot].2.iter_mut().zip(&dz1) {
                *acc += d;
            }
        }
        let seq_offset = TX_FEATURES + self.buckets();
        for (ctx, pass, dz) in &slots {
            let c = &prep.contexts[*ctx];
            if !c.mempool.is_empty() {
                g.head1.w.add_outer_cols(dz, &c.mempool, TX_FEATURES);
            }
            if let Some(cache) = &pass.seq_cache {
                g.head1.w.add_outer_cols(dz, &pass.seq_out, seq_offset);
                let mut ds = vec![0.0; pass.seq_out.len()];
                self.head1.w.matvec_t_cols_acc(dz, seq_offset, &mut ds);
                self.seq.backward(cache, &ds, &mut g.seq);
            }
        }
        Ok(loss)
    }

    /// Loss and parameter gradients over the given instances.
    pub fn loss_and_grad(&self, prep: &Prepared, batch: &[usize]) -> Result<(f64, FennModel)> {
        let mut g = self.zeroed();
        let loss = self.batch_loss(prep, batch, Some(&mut g))?;
        Ok((loss, g))
    }

    pub fn loss(&self, prep: &Prepared, batch: &[usize]) -> Result<f64> {
        self.batch_loss(prep, batch, None)
    }

    /// Fits scaling on `data`, initialises and trains for `config.epochs`.
    pub fn fit(data: &FennDataset, config: &FennConfig) -> Result<(Self, TrainReport)> {
        if data.is_empty() {
            return Err(Error::InsufficientData("no training instances".into()));
        }
        let mut model = FennModel::new(config, FeatureScaling::fit(data))?;
        let report = model.train_epochs(data, config.epochs)?;
        Ok((model, report))
    }

    /// Continues training from the current weights with a fresh optimiser.
    pub fn train_epochs(&mut self, data: &FennDataset, epochs: usize) -> Result<TrainReport> {
        let mut adam = Adam::new(self, self.config.adam);
        self.train_epochs_with(data, epochs, &mut adam)
    }

    /// Continues training with an optimiser carried over from earlier calls.
    pub fn train_epochs_with(&mut self, data: &FennDataset, epochs: usize, adam: &mut Adam) -> Result<TrainReport> {
        let start = Instant::now();
        let prep = self.prepare(data)?;
        let mut rng = seeded_rng(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut order: Vec<usize> = (0..prep.len()).collect();
        let mut epoch_losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0;
            for batch in order.chunks(self.config.batch_size) {
                let (loss, g) = self.loss_and_grad(&prep, batch)?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged(format!("loss became {loss}")));
                }
                adam.step(self, &g)?;
                total += loss;
                batches += 1;
            }
            epoch_losses.push(total / batches.max(1) as f64);
        }
        Ok(TrainReport {
            epoch_losses,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Predicted fee in satoshi for every instance of `data`.
    pub fn predict(&self, data: &FennDataset) -> Result<Vec<f64>> {
        let prep = self.prepare(data)?;
        let mut cache: Vec<Option<ContextPass>> = (0..prep.contexts.len()).map(|_| None).collect();
        let mut out = Vec::with_capacity(prep.len());
        for inst in &prep.instances {
            if cache[inst.context].is_none() {
                cache[inst.context] = Some(self.context_pass(&prep.contexts[inst.context], false)?);
            }
            let pass = self.instance_pass(cache[inst.context].as_ref().expect("filled above"), &inst.tx)?;
            out.push(self.scaling.unscale_target(pass.y));
        }
        Ok(out)
    }

    /// Raw head output for one request, before the inverse target transform.
    pub fn raw_output(&self, context: &RawContext, tx: &[f64; TX_FEATURES]) -> Result<f64> {
        let ctx = self.context_pass(&self.prepare_context(context), false)?;
        Ok(self.instance_pass(&ctx, &self.scaling.tx.apply(tx))?.y)
    }

    /// Fee for `tx` to confirm within `theta` blocks, given the current
    /// mempool and the chain up to its height.
    pub fn estimate_fee(&self, chain: &ChainView, mempool: &MempoolSnapshot, tx: &TxSkeleton, theta: u32) -> Result<f64> {
        let raw = super::extract_features(chain, mempool, tx, theta, &self.config.scheme)?;
        let context = RawContext {
            height: mempool.height(),
            mempool: raw.mempool,
            sequence: raw.sequence,
        };
        Ok(self.scaling.unscale_target(self.raw_output(&context, &raw.tx)?))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(serde_json::json!({
            "engine": "fenn",
            "config": self.config,
        }));
        ck.add_module("model", self);
        let vec = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec()).expect("vector shape");
        for (name, s) in [
            ("tx", &self.scaling.tx),
            ("mempool", &self.scaling.mempool),
            ("network", &self.scaling.network),
        ] {
            ck.params.push((format!("scaling.{name}.mean"), vec(&s.mean)));
            ck.params.push((format!("scaling.{name}.std"), vec(&s.std)));
        }
        ck.params
            .push(("scaling.target".into(), vec(&[self.scaling.target_mean, self.scaling.target_std])));
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: FennConfig = serde_json::from_value(ck.metadata["config"].clone())?;
        let get = |name: &str| {
            ck.get(name)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))
        };
        let standardizer = |name: &str| -> Result<Standardizer> {
            Ok(Standardizer {
                mean: get(&format!("scaling.{name}.mean"))?,
                std: get(&format!("scaling.{name}.std"))?,
            })
        };
        let target = get("scaling.target")?;
        if target.len() != 2 {
            return Err(Error::Checkpoint("scaling.target must hold two values".into()));
        }
        let scaling = FeatureScaling {
            tx: standardizer("tx")?,
            mempool: standardizer("mempool")?,
            network: standardizer("network")?,
            target_mean: target[0],
            target_std: target[1],
        };
        let mut model = FennModel::new(&config, scaling)?;
        ck.load_module("model", &mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Finite-difference check of the whole training graph of `config` on a
/// small random dataset.
pub fn gradient_check(config: &FennConfig, instances: usize) -> Result<GradCheckReport> {
    let mut rng = seeded_rng(config.seed.wrapping_add(1));
    let buckets = config.scheme.bucket_count();
    let contexts = instances.div_ceil(2).max(1);
    let data = FennDataset {
        contexts: (0..contexts)
            .map(|h| RawContext {
                height: h as u64,
                mempool: (0..buckets).map(|_| rng.random_range(0.0..40.0f64).floor()).collect(),
                sequence: (0..super::SEQ_LEN)
                    .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
                    .collect(),
            })
            .collect(),
        instances: (0..instances)
            .map(|i| super::RawInstance {
                context: i % contexts,
                tx_index: None,
                tx: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
                fee: rng.random_range(100..100_000),
            })
            .collect(),
    };
    let model = FennModel::new(config, FeatureScaling::fit(&data))?;
    let prep = model.prepare(&data)?;
    let batch: Vec<usize> = (0..instances).collect();
    let (_, g) = model.loss_and_grad(&prep, &batch)?;
    Ok(grad_check(&model, &g, |m| m.loss(&prep, &batch).expect("shapes fixed")))
}
