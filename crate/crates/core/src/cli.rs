//! Command-line front end. Every subcommand that writes files also writes
//! `run_config.json`, whose `argv` re-runs it.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bcore::{BCore, BCoreConfig, Era, ResultMode};
use crate::btcflow::{BtcFlow, BtcFlowConfig};
use crate::error::{Error, Result};
use crate::eval::{
    engines_from_names, retrain_frequency_experiment, run_benchmark, BenchmarkOptions, Refit, SplitSpec,
    RETRAIN_POLICIES,
};
use crate::fenn::{self, Ablation, FennConfig, FennModel, Variant};
use crate::ingest::{load_chain, reconstruct_mempool, synth_generate, write_chain, SynthConfig};
use crate::model::{BucketScheme, ChainView, Height, TxSkeleton};
use crate::mslp::{self, Mslp, MslpConfig};
use crate::nn::{layer_suite, AdamConfig};

pub const SEED_ENV: &str = "FEERATE_LAB_SEED";
const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser, Serialize)]
#[command(name = "feerate-lab", version, about = "Bitcoin fee estimators and their evaluation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Load a chain dump, validate it and write it back in canonical form.
    Ingest(IngestArgs),
    /// Generate a seeded synthetic chain.
    Synth(SynthArgs),
    /// Train an MSLP or FENN model and save a checkpoint.
    Train(TrainArgs),
    /// Estimate one feerate (or fee, for FENN) at a given height.
    Estimate(EstimateArgs),
    /// Replay a train/test split and score the selected engines.
    Evaluate(EvaluateArgs),
    /// Compare FENN variants, feature ablations or retraining policies.
    Compare(CompareArgs),
    /// Finite-difference check of every layer and every FENN graph.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Dump directory (`chain.csv` + `txs.csv`) or `.json` file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-bucket mempool aggregates at this height.
    #[arg(long)]
    pub mempool_at: Option<Height>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 225)]
    pub blocks: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Mean transaction arrivals per minute.
    #[arg(long, default_value_t = 22.0)]
    pub tx_rate: f64,
    #[arg(long, default_value_t = 180_000)]
    pub block_weight: u64,
    /// Per-block change of the log-feerate location.
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum TrainEngine {
    Mslp,
    Fenn,
}

#[derive(Debug, Args, Serialize)]
pub struct FennArgs {
    #[arg(long, default_value = "adv")]
    pub variant: String,
    #[arg(long, default_value = "full")]
    pub ablation: String,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1000)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Use `o ⊙ tanh(c_{t-1})` as the LSTM output.
    #[arg(long)]
    pub paper_literal_lstm: bool,
}

impl FennArgs {
    fn config(&self, seed: u64) -> Result<FennConfig> {
        let config = FennConfig {
            variant: self.variant.parse()?,
            ablation: self.ablation.parse()?,
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed,
            literal_lstm: self.paper_literal_lstm,
            ..FennConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub engine: TrainEngine,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Last block the model may learn from; defaults to the chain tip.
    #[arg(long)]
    pub tip: Option<Height>,
    /// Block capacity in weight units for MSLP's virtual blocks; defaults to
    /// the largest block in the data.
    #[arg(long)]
    pub block_weight: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub fenn: FennArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum EstimateEngine {
    Btcflow,
    Bcore,
    Mslp,
    Fenn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ModeArg {
    Conservative,
    Economical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum EraArg {
    Pre15,
    Post15,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(long, value_enum)]
    pub engine: EstimateEngine,
    #[arg(long)]
    pub data: PathBuf,
    /// Height of the observer; defaults to the chain tip.
    #[arg(long)]
    pub height: Option<Height>,
    /// Target in minutes (btcflow).
    #[arg(long)]
    pub minutes: Option<f64>,
    /// Target in blocks (bcore, mslp, fenn).
    #[arg(long)]
    pub blocks: Option<u32>,
    #[arg(long, default_value_t = 0.8)]
    pub p: f64,
    /// Unix time of the request (btcflow); defaults to the block's timestamp.
    #[arg(long)]
    pub now: Option<i64>,
    #[arg(long, value_enum, default_value = "conservative")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "post15")]
    pub era: EraArg,
    /// Block capacity in weight units; defaults to the largest block in the data.
    #[arg(long)]
    pub block_weight: Option<u64>,
    /// Checkpoint from `train`; MSLP is trained on the fly without one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub inputs: u32,
    #[arg(long, default_value_t = 2)]
    pub outputs: u32,
    #[arg(long, default_value_t = 370)]
    pub size: u64,
    #[arg(long, default_value_t = 832)]
    pub weight: u64,
    #[arg(long, default_value_t = 2)]
    pub version: i32,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 180)]
    pub train: u64,
    #[arg(long, default_value_t = 45)]
    pub test: u64,
    #[arg(long, default_value_t = 0)]
    pub offset: u64,
}

impl SplitArgs {
    fn spec(&self) -> SplitSpec {
        SplitSpec {
            train_blocks: self.train,
            test_blocks: self.test,
            offset: self.offset,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Comma-separated engine names, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub engines: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Output directory; defaults to `<data>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub block_weight: Option<u64>,
    #[arg(long)]
    pub retrain_every: Option<u64>,
    /// Epochs per refit of an already trained network.
    #[arg(long, default_value_t = 10)]
    pub retrain_epochs: usize,
    /// Learning rate of those refit epochs.
    #[arg(long, default_value_t = 1e-4)]
    pub retrain_lr: f64,
    #[arg(long)]
    pub train_window: Option<u64>,
    /// Evaluate engines on concurrent threads.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub fenn: FennArgs,
}

fn refit(epochs: usize, lr: f64) -> Result<Refit> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidInput(format!("retrain learning rate {lr} must be positive")));
    }
    Ok(Refit { epochs, lr })
}

impl EvaluateArgs {
    fn refit(&self) -> Result<Refit> {
        refit(self.retrain_epochs, self.retrain_lr)
    }
}

impl CompareArgs {
    fn refit(&self) -> Result<Refit> {
        refit(self.retrain_epochs, self.retrain_lr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum CompareWhat {
    Variants,
    Ablations,
    Retrain,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long, value_enum)]
    pub what: CompareWhat,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<u64>,
    /// Epochs per refit of an already trained network.
    #[arg(long, default_value_t = 10)]
    pub retrain_epochs: usize,
    /// Learning rate of those refit epochs.
    #[arg(long, default_value_t = 1e-4)]
    pub retrain_lr: f64,
    #[arg(long)]
    pub train_window: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub fenn: FennArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Width of the FENN sequence module under test.
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct RunConfig<'a> {
    tool: &'static str,
    version: &'static str,
    /// Arguments with the seed made explicit.
    argv: Vec<String>,
    seed: Option<u64>,
    command: &'a Command,
}

/// `FEERATE_LAB_SEED` if set, else the built-in default.
pub fn default_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn resolve_seed(explicit: Option<u64>) -> Result<u64> {
    explicit.map_or_else(default_seed, Ok)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on user error, 2 on internal error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}

pub fn run(cli: &Cli, args: &[String]) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a, cli, args),
        Command::Synth(a) => synth(a, cli, args),
        Command::Train(a) => train(a, cli, args),
        Command::Estimate(a) => estimate(a),
        Command::Evaluate(a) => evaluate(a, cli, args),
        Command::Compare(a) => compare(a, cli, args),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn echo_config(dir: &Path, cli: &Cli, args: &[String], seed: Option<u64>) -> Result<()> {
    let mut argv = args.to_vec();
    if let Some(s) = seed {
        if !argv.iter().any(|a| a == "--seed" || a.starts_with("--seed=")) {
            argv.push("--seed".into());
            argv.push(s.to_string());
        }
    }
    let config = RunConfig {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        argv,
        seed,
        command: &cli.command,
    };
    write_json(&dir.join("run_config.json"), &config)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn infer_block_weight(chain: &ChainView) -> Result<u64> {
    chain
        .blocks()
        .iter()
        .map(|b| b.total_weight)
        .max()
        .filter(|&w| w > 0)
        .ok_or_else(|| Error::InsufficientData("no block carries any weight; pass --block-weight".into()))
}

fn observer_height(chain: &ChainView, height: Option<Height>) -> Result<Height> {
    let tip = chain
        .tip_height()
        .ok_or_else(|| Error::InsufficientData("chain has no blocks".into()))?;
    match height {
        Some(h) if chain.block(h).is_none() => Err(Error::InvalidInput(format!("no block at height {h}"))),
        Some(h) => Ok(h),
        None => Ok(tip),
    }
}

#[derive(Debug, Serialize)]
struct ChainSummary {
    blocks: usize,
    transactions: usize,
    confirmed: usize,
    evicted: usize,
    first_height: Option<Height>,
    tip_height: Option<Height>,
}

fn ingest(a: &IngestArgs, cli: &Cli, args: &[String]) -> Result<()> {
    let chain = load_chain(&a.input)?;
    create_dir(&a.out)?;
    write_chain(&a.out, &chain)?;
    let summary = ChainSummary {
        blocks: chain.blocks().len(),
        transactions: chain.tx_count(),
        confirmed: chain.transactions().filter(|t| t.confirm_height.is_some()).count(),
        evicted: chain.transactions().filter(|t| t.is_evicted()).count(),
        first_height: chain.first_height(),
        tip_height: chain.tip_height(),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    if let Some(h) = a.mempool_at {
        let mempool = reconstruct_mempool(&chain, h, BucketScheme::geometric())?;
        let path = a.out.join("mempool.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let scheme = mempool.scheme();
        w.write_record(["bucket", "lower_feerate", "upper_feerate", "count", "weight"])
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        for (slot, (c, wt)) in mempool.bucket_counts().iter().zip(mempool.bucket_weights()).enumerate() {
            w.write_record([
                slot.to_string(),
                scheme.lower_bound(slot).to_string(),
                scheme.upper_bound(slot).to_string(),
                c.to_string(),
                wt.to_string(),
            ])
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    echo_config(&a.out, cli, args, None)?;
    println!(
        "{} blocks, {} transactions ({} confirmed, {} evicted)",
        summary.blocks, summary.transactions, summary.confirmed, summary.evicted
    );
    Ok(())
}

fn synth(a: &SynthArgs, cli: &Cli, args: &[String]) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let mut config = SynthConfig {
        n_blocks: a.blocks,
        block_weight_limit: a.block_weight,
        tx_arrival_rate: a.tx_rate,
        seed,
        ..SynthConfig::default()
    };
    config.feerate.drift_per_block = a.drift;
    let chain = synth_generate(&config)?;
    create_dir(&a.out)?;
    write_chain(&a.out, &chain)?;
    write_json(&a.out.join("synth_config.json"), &config)?;
    echo_config(&a.out, cli, args, Some(seed))?;
    println!("{} blocks, {} transactions", chain.blocks().len(), chain.tx_count());
    Ok(())
}

fn train(a: &TrainArgs, cli: &Cli, args: &[String]) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let chain = load_chain(&a.data)?;
    let tip = observer_height(&chain, a.tip)?;
    let observed = chain.truncated(tip);
    create_dir(&a.out)?;
    let path = a.out.join("model.ckpt");
    match a.engine {
        TrainEngine::Mslp => {
            let block = match a.block_weight {
                Some(b) => b,
                None => infer_block_weight(&observed)?,
            };
            let config = MslpConfig {
                seed,
                ..MslpConfig::with_block(block)
            };
            let model = mslp::fit(&observed, tip, &config)?;
            model.save(&path)?;
            let trained = model.models.iter().filter(|m| m.is_some()).count();
            println!("mslp: {trained} of 4 range models trained");
        }
        TrainEngine::Fenn => {
            let config = a.fenn.config(seed)?;
            let data = fenn::build_training_set(&observed, tip, &config.scheme)?;
            let (model, report) = FennModel::fit(&data, &config)?;
            model.save(&path)?;
            write_json(&a.out.join("train_report.json"), &report)?;
            println!(
                "fenn-{}: {} instances, final loss {:.5}, {:.1}s",
                config.variant,
                data.len(),
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                report.seconds
            );
        }
    }
    echo_config(&a.out, cli, args, Some(seed))
}

fn estimate(a: &EstimateArgs) -> Result<()> {
    let chain = load_chain(&a.data)?;
    let height = observer_height(&chain, a.height)?;
    let observed = chain.truncated(height);
    let mempool = reconstruct_mempool(&observed, height, BucketScheme::geometric())?;
    let blocks = || a.blocks.ok_or_else(|| Error::InvalidInput("--blocks is required for this engine".into()));
    match a.engine {
        EstimateEngine::Btcflow => {
            let minutes = a
                .minutes
                .ok_or_else(|| Error::InvalidInput("--minutes is required for btcflow".into()))?;
            let block_weight = match a.block_weight {
                Some(b) => b,
                None => infer_block_weight(&observed)?,
            } as f64;
            let model = BtcFlow::new(BtcFlowConfig { block_weight, p: a.p })?;
            let now = a.now.unwrap_or(observed.block(height).expect("checked").timestamp);
            let est = model.estimate(&observed, &mempool, minutes, now)?;
            if est.low_confidence {
                eprintln!("warning: no feerate scale satisfies the drain condition");
            }
            println!("{}", est.feerate);
        }
        EstimateEngine::Bcore => {
            let config = BCoreConfig {
                era: match a.era {
                    EraArg::Pre15 => Era::Pre15,
                    EraArg::Post15 => Era::Post15,
                },
                mode: match a.mode {
                    ModeArg::Conservative => ResultMode::Conservative,
                    ModeArg::Economical => ResultMode::Economical,
                },
                ..BCoreConfig::default()
            };
            let est = BCore::fit(&observed, config)?.estimate(blocks()?, &mempool)?;
            println!("{}", est.feerate);
        }
        EstimateEngine::Mslp => {
            let model = match &a.model {
                Some(p) => Mslp::load(p)?,
                None => {
                    let block = match a.block_weight {
                        Some(b) => b,
                        None => infer_block_weight(&observed)?,
                    };
                    let config = MslpConfig {
                        seed: default_seed()?,
                        ..MslpConfig::with_block(block)
                    };
                    mslp::fit(&observed, height, &config)?
                }
            };
            println!("{}", model.estimate(blocks()?, &mempool)?);
        }
        EstimateEngine::Fenn => {
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("--model is required for fenn".into()))?;
            let model = FennModel::load(path)?;
            let tx = TxSkeleton {
                version: a.version,
                size: a.size,
                weight: a.weight,
                inputs: a.inputs,
                outputs: a.outputs,
            };
            println!("{}", model.estimate_fee(&observed, &mempool, &tx, blocks()?)?);
        }
    }
    Ok(())
}

fn out_dir(explicit: &Option<PathBuf>, data: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let base = if data.extension().is_some_and(|e| e == "json") {
            data.parent().map(Path::to_path_buf).unwrap_or_default()
        } else {
            data.to_path_buf()
        };
        base.join(name)
    })
}

fn evaluate(a: &EvaluateArgs, cli: &Cli, args: &[String]) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let chain = load_chain(&a.data)?;
    let block_weight = match a.block_weight {
        Some(b) => b,
        None => infer_block_weight(&chain.truncated(a.split.spec().resolve(&chain)?.train_end))?,
    };
    let mut engines = engines_from_names(&a.engines, block_weight, &a.fenn.config(seed)?, a.refit()?)?;
    let options = BenchmarkOptions {
        retrain_every: a.retrain_every,
        train_window: a.train_window,
        parallel: a.parallel,
        keep_predictions: true,
    };
    let report = run_benchmark(&chain, &mut engines, a.split.spec(), options)?;
    let out = out_dir(&a.out, &a.data, "eval");
    create_dir(&out)?;
    report.write_csv(&out.join("report.csv"))?;
    report.write_timing_csv(&out.join("timing.csv"))?;
    report.write_predictions(&out.join("predictions.csv"))?;
    echo_config(&out, cli, args, Some(seed))?;
    print!("{}", report.to_table());
    Ok(())
}

fn compare(a: &CompareArgs, cli: &Cli, args: &[String]) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let chain = load_chain(&a.data)?;
    let base = a.fenn.config(seed)?;
    let out = out_dir(&a.out, &a.data, "compare");
    create_dir(&out)?;
    let path = out.join("compare.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut record = |fields: Vec<String>| w.write_record(&fields).map_err(|e| Error::InvalidInput(e.to_string()));
    match a.what {
        CompareWhat::Retrain => {
            let policies = if a.policies.is_empty() {
                RETRAIN_POLICIES.to_vec()
            } else {
                a.policies.clone()
            };
            let results =
                retrain_frequency_experiment(&chain, &base, a.refit()?, a.split.spec(), &policies, a.train_window)?;
            record(vec!["policy".into(), "fits".into(), "rmse".into(), "mape".into(), "coverage".into()])?;
            for r in &results {
                println!("policy {:>3}: rmse {:.1} mape {:.2}%", r.policy, r.row.rmse, r.row.mape);
                record(vec![
                    r.policy.to_string(),
                    r.row.fits.to_string(),
                    r.row.rmse.to_string(),
                    r.row.mape.to_string(),
                    r.row.coverage().to_string(),
                ])?;
            }
        }
        CompareWhat::Variants | CompareWhat::Ablations => {
            let names: Vec<String> = if a.what == CompareWhat::Variants {
                Variant::ALL.iter().map(|v| format!("fenn-{v}")).collect()
            } else {
                Ablation::ALL.iter().map(|x| format!("fenn-{}-{x}", base.variant)).collect()
            };
            let block_weight = infer_block_weight(&chain)?;
            let mut engines = engines_from_names(&names, block_weight, &base, a.refit()?)?;
            let options = BenchmarkOptions {
                keep_predictions: false,
                ..BenchmarkOptions::default()
            };
            let report = run_benchmark(&chain, &mut engines, a.split.spec(), options)?;
            record(vec!["engine".into(), "rmse".into(), "mape".into(), "train_seconds".into()])?;
            for r in &report.rows {
                record(vec![
                    r.engine.clone(),
                    r.rmse.to_string(),
                    r.mape.to_string(),
                    r.train_seconds.to_string(),
                ])?;
            }
            print!("{}", report.to_table());
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    echo_config(&out, cli, args, Some(seed))
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let mut reports = layer_suite(seed);
    for variant in Variant::ALL {
        let config = FennConfig {
            variant,
            seq_hidden: a.hidden,
            head_hidden: [a.hidden, 8],
            seed,
            ..FennConfig::default()
        };
        reports.push((format!("fenn-{variant}"), fenn::gradient_check(&config, 4)?));
    }
    let mut failed = Vec::new();
    for (name, r) in &reports {
        let ok = r.passes(a.tolerance);
        println!(
            "{:<20} {:>6} params  max rel err {:.3e}  {}",
            name,
            r.checked,
            r.max_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(format!("{name} ({})", r.worst));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradientCheck(format!(
            "relative error above {} for {}",
            a.tolerance,
            failed.join(", ")
        )))
    }
}
