use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::engines::{FeeEngine, FennEngine, QueryView, Refit, TrainWindow};
use super::{metrics, SplitHeights, SplitSpec};
use crate::error::{Error, Result};
use crate::fenn::FennConfig;
use crate::ingest::reconstruct_mempool;
use crate::model::{BucketScheme, ChainView, Height, MempoolSnapshot, Transaction};

pub const RETRAIN_POLICIES: [u64; 6] = [1, 3, 5, 9, 15, 45];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    /// Refit every this many test blocks; `None` fits once before the test range.
    pub retrain_every: Option<u64>,
    /// Blocks of history handed to each fit; `None` keeps the split's start.
    pub train_window: Option<u64>,
    pub parallel: bool,
    pub keep_predictions: bool,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            retrain_every: None,
            train_window: None,
            parallel: false,
            keep_predictions: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

impl LatencyStats {
    fn from_micros(mut v: Vec<f64>) -> Self {
        if v.is_empty() {
            return LatencyStats::default();
        }
        v.sort_by(f64::total_cmp);
        let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
        LatencyStats {
            mean_us: v.iter().sum::<f64>() / v.len() as f64,
            p50_us: at(0.5),
            p95_us: at(0.95),
            max_us: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineRow {
    pub engine: String,
    /// `NaN` when nothing was answered.
    pub rmse: f64,
    pub mape: f64,
    pub answered: usize,
    pub queries: usize,
    pub zero_truth: usize,
    pub train_seconds: f64,
    pub fits: usize,
    pub latency: LatencyStats,
    /// Failure counts by error kind; fit failures are prefixed with `fit:`.
    pub errors: BTreeMap<String, usize>,
}

impl EngineRow {
    pub fn coverage(&self) -> f64 {
        if self.queries == 0 {
            0.0
        } else {
            self.answered as f64 / self.queries as f64
        }
    }

    fn error_summary(&self) -> String {
        self.errors
            .iter()
            .map(|(k, n)| format!("{k}:{n}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub txid: String,
    pub engine: String,
    pub theta: u32,
    pub true_fee: u64,
    pub pred_fee: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub split: SplitSpec,
    pub heights: SplitHeights,
    pub options: BenchmarkOptions,
    pub rows: Vec<EngineRow>,
    pub predictions: Vec<Prediction>,
}

impl BenchmarkReport {
    pub fn row(&self, engine: &str) -> Option<&EngineRow> {
        self.rows.iter().find(|r| r.engine == engine)
    }

    /// Accuracy columns only, so seeded runs reproduce the file exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = ["engine", "rmse", "mape", "coverage", "answered", "queries", "zero_truth", "fits", "errors"];
        write_records(
            path,
            &header,
            self.rows.iter().map(|r| {
                vec![
                    r.engine.clone(),
                    r.rmse.to_string(),
                    r.mape.to_string(),
                    r.coverage().to_string(),
                    r.answered.to_string(),
                    r.queries.to_string(),
                    r.zero_truth.to_string(),
                    r.fits.to_string(),
                    r.error_summary(),
                ]
            }),
        )
    }

    /// Wall-clock training seconds and per-query latency.
    pub fn write_timing_csv(&self, path: &Path) -> Result<()> {
        let header = [
            "engine",
            "train_seconds",
            "fits",
            "latency_mean_us",
            "latency_p50_us",
            "latency_p95_us",
            "latency_max_us",
        ];
        write_records(
            path,
            &header,
            self.rows.iter().map(|r| {
                vec![
                    r.engine.clone(),
                    r.train_seconds.to_string(),
                    r.fits.to_string(),
                    r.latency.mean_us.to_string(),
                    r.latency.p50_us.to_string(),
                    r.latency.p95_us.to_string(),
                    r.latency.max_us.to_string(),
                ]
            }),
        )
    }

    /// Columns `txid,engine,theta,true_fee,pred_fee`; unanswered queries
    /// leave `pred_fee` empty.
    pub fn write_predictions(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for p in &self.predictions {
            w.serialize(p).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<18} {:>12} {:>9} {:>9} {:>10} {:>12}\n",
            "engine", "rmse", "mape%", "coverage", "train_s", "p50_us"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:>12.1} {:>9.2} {:>8.1}% {:>10.2} {:>12.1}",
                r.engine,
                r.rmse,
                r.mape,
                100.0 * r.coverage(),
                r.train_seconds,
                r.latency.p50_us
            );
        }
        s
    }
}

fn write_records(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for record in rows {
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::InvalidInput(format!("writing {}: {e}", path.display()))
}

#[derive(Default)]
struct Tally {
    truth: Vec<f64>,
    pred: Vec<f64>,
    queries: usize,
    latencies: Vec<f64>,
    train_seconds: f64,
    fits: usize,
    errors: BTreeMap<String, usize>,
    predictions: Vec<Prediction>,
}

struct TestQuery<'a> {
    tx: &'a Transaction,
    theta: u32,
}

fn test_queries<'a>(chain: &'a ChainView, heights: &SplitHeights) -> BTreeMap<Height, Vec<TestQuery<'a>>> {
    let mut out: BTreeMap<Height, Vec<TestQuery<'a>>> = BTreeMap::new();
    for tx in chain.transactions() {
        let h = tx.entry_height;
        if h < heights.test_start || h > heights.test_end {
            continue;
        }
        let Some(c) = tx.confirm_height else { continue };
        if c > h {
            out.entry(h).or_default().push(TestQuery {
                tx,
                theta: (c - h) as u32,
            });
        }
    }
    out
}

fn fit_engine(engine: &mut dyn FeeEngine, tally: &mut Tally, chain: &ChainView, window: TrainWindow) -> Result<()> {
    let start = Instant::now();
    let result = engine.fit(chain, window);
    tally.train_seconds += start.elapsed().as_secs_f64();
    tally.fits += 1;
    if let Err(e) = result {
        *tally.errors.entry(format!("fit:{}", e.kind())).or_default() += 1;
    }
    match engine.fitted_through().filter(|&t| t > window.tip) {
        Some(t) => Err(Error::Validation(format!(
            "{} reports state through block {t} after fitting up to {}",
            engine.name(),
            window.tip
        ))),
        None => Ok(()),
    }
}

fn query_engine(
    engine: &mut dyn FeeEngine,
    tally: &mut Tally,
    chain: &ChainView,
    mempool: &MempoolSnapshot,
    queries: &[TestQuery<'_>],
    keep: bool,
) -> Result<()> {
    let name = engine.name();
    for q in queries {
        let observed = chain
            .transaction(&q.tx.txid)
            .ok_or_else(|| Error::Validation(format!("{} missing from the observed chain", q.tx.txid)))?;
        let view = QueryView {
            chain,
            mempool,
            tx: observed,
            theta: q.theta,
        };
        let start = Instant::now();
        let result = engine.estimate(&view);
        tally.latencies.push(start.elapsed().as_secs_f64() * 1e6);
        if let Some(t) = engine.fitted_through().filter(|&t| t >= mempool.height()) {
            return Err(Error::Validation(format!(
                "{name} state reaches block {t} while answering a query at height {}",
                mempool.height()
            )));
        }
        tally.queries += 1;
        let pred = match result {
            Ok(fee) if fee.is_finite() => {
                tally.truth.push(q.tx.fee as f64);
                tally.pred.push(fee);
                Some(fee)
            }
            Ok(_) => {
                *tally.errors.entry("non_finite".into()).or_default() += 1;
                None
            }
            Err(e) => {
                *tally.errors.entry(e.kind().into()).or_default() += 1;
                None
            }
        };
        if keep {
            tally.predictions.push(Prediction {
                txid: q.tx.txid.clone(),
                engine: name.clone(),
                theta: q.theta,
                true_fee: q.tx.fee,
                pred_fee: pred,
            });
        }
    }
    Ok(())
}

fn for_each_engine(
    engines: &mut [Box<dyn FeeEngine>],
    tallies: &mut [Tally],
    parallel: bool,
    f: impl Fn(&mut dyn FeeEngine, &mut Tally) -> Result<()> + Sync,
) -> Result<()> {
    if parallel && engines.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = engines
                .iter_mut()
                .zip(tallies.iter_mut())
                .map(|(e, t)| {
                    let f = &f;
                    s.spawn(move || f(e.as_mut(), t))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("engine thread panicked"))
                .collect::<Result<Vec<()>>>()
        })?;
        Ok(())
    } else {
        for (e, t) in engines.iter_mut().zip(tallies.iter_mut()) {
            f(e.as_mut(), t)?;
        }
        Ok(())
    }
}

/// Fits every engine on the training blocks, queries it for each test
/// transaction at its entry height with its realised interval as target,
/// and scores the answered queries.
pub fn run_benchmark(
    chain: &ChainView,
    engines: &mut [Box<dyn FeeEngine>],
    split: SplitSpec,
    options: BenchmarkOptions,
) -> Result<BenchmarkReport> {
    if engines.is_empty() {
        return Err(Error::InvalidInput("no engines selected".into()));
    }
    if options.retrain_every == Some(0) || options.train_window == Some(0) {
        return Err(Error::InvalidInput("retrain interval and window must be positive".into()));
    }
    let heights = split.resolve(chain)?;
    let queries = test_queries(chain, &heights);
    let blocks = chain.blocks();
    let first_test = chain.block_index(heights.test_start).expect("resolved from this chain");
    let train_first = chain.block_index(heights.train_start).expect("resolved from this chain");
    let mut tallies: Vec<Tally> = engines.iter().map(|_| Tally::default()).collect();

    for (k, block) in blocks[first_test..].iter().take(split.test_blocks as usize).enumerate() {
        let h = block.height;
        let due = k == 0 || options.retrain_every.is_some_and(|every| (k as u64).is_multiple_of(every));
        if due {
            let tip_index = first_test + k - 1;
            let start_index = match options.train_window {
                Some(w) => (tip_index + 1).saturating_sub(w as usize).max(train_first),
                None => train_first,
            };
            let window = TrainWindow {
                start: blocks[start_index].height,
                tip: blocks[tip_index].height,
            };
            let observed = chain.truncated(window.tip);
            for_each_engine(engines, &mut tallies, options.parallel, |e, t| {
                fit_engine(e, t, &observed, window)
            })?;
        }
        let Some(at_h) = queries.get(&h) else { continue };
        let observed = chain.truncated(h);
        let mempool = reconstruct_mempool(&observed, h, BucketScheme::geometric())?;
        for_each_engine(engines, &mut tallies, options.parallel, |e, t| {
            query_engine(e, t, &observed, &mempool, at_h, options.keep_predictions)
        })?;
    }

    let mut rows = Vec::with_capacity(engines.len());
    let mut predictions = Vec::new();
    for (engine, tally) in engines.iter().zip(tallies) {
        let (rmse, mape, zero_truth) = if tally.truth.is_empty() {
            (f64::NAN, f64::NAN, 0)
        } else {
            let m = metrics(&tally.truth, &tally.pred)?;
            (m.rmse, m.mape, m.zero_truth)
        };
        rows.push(EngineRow {
            engine: engine.name(),
            rmse,
            mape,
            answered: tally.truth.len(),
            queries: tally.queries,
            zero_truth,
            train_seconds: tally.train_seconds,
            fits: tally.fits,
            latency: LatencyStats::from_micros(tally.latencies),
            errors: tally.errors,
        });
        predictions.extend(tally.predictions);
    }
    Ok(BenchmarkReport {
        split,
        heights,
        options,
        rows,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: u64,
    pub row: EngineRow,
}

/// Scores one neural configuration retrained every `policy` test blocks,
/// continuing from the previous weights each time.
pub fn retrain_frequency_experiment(
    chain: &ChainView,
    config: &FennConfig,
    refit: Refit,
    split: SplitSpec,
    policies: &[u64],
    train_window: Option<u64>,
) -> Result<Vec<PolicyResult>> {
    policies
        .iter()
        .map(|&policy| {
            let mut engines: Vec<Box<dyn FeeEngine>> = vec![Box::new(FennEngine::new(*config, refit))];
            let options = BenchmarkOptions {
                retrain_every: Some(policy),
                train_window,
                parallel: false,
                keep_predictions: false,
            };
            let report = run_benchmark(chain, &mut engines, split, options)?;
            Ok(PolicyResult {
                policy,
                row: report.rows.into_iter().next().expect("one engine"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::OracleEngine;
    use crate::ingest::{synth_generate, SynthConfig};

    fn small_chain() -> ChainView {
        synth_generate(&SynthConfig {
            n_blocks: 12,
            tx_arrival_rate: 6.0,
            block_weight_limit: 60_000,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    struct Probe {
        fits: Vec<TrainWindow>,
        max_seen_block: Height,
        tip: Option<Height>,
    }

    impl FeeEngine for Probe {
        fn name(&self) -> String {
            "probe".into()
        }

        fn fit(&mut self, chain: &ChainView, window: TrainWindow) -> Result<()> {
            self.fits.push(window);
            self.max_seen_block = self.max_seen_block.max(chain.tip_height().unwrap());
            assert!(chain.transactions().all(|t| t.confirm_height.is_none_or(|c| c <= window.tip)));
            self.tip = Some(window.tip);
            Ok(())
        }

        fn estimate(&mut self, q: &QueryView<'_>) -> Result<f64> {
            assert_eq!(q.tx.confirm_height, None);
            Err(Error::InsufficientData("probe".into()))
        }

        fn fitted_through(&self) -> Option<Height> {
            self.tip
        }
    }

    #[test]
    fn oracle_scores_zero() {
        let chain = small_chain();
        let mut engines: Vec<Box<dyn FeeEngine>> = vec![Box::new(OracleEngine)];
        let report = run_benchmark(&chain, &mut engines, SplitSpec::new(8, 3), BenchmarkOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert!(row.answered > 0);
        assert_eq!((row.rmse, row.mape), (0.0, 0.0));
        assert_eq!(row.coverage(), 1.0);
        assert_eq!(report.predictions.len(), row.queries);
    }

    #[test]
    fn retrain_events_follow_policy() {
        let chain = small_chain();
        let split = SplitSpec::new(3, 9);
        for (policy, fits) in [(1, 9), (3, 3), (4, 3), (9, 1), (45, 1)] {
            let mut engines: Vec<Box<dyn FeeEngine>> = vec![Box::new(Probe {
                fits: vec![],
                max_seen_block: 0,
                tip: None,
            })];
            let options = BenchmarkOptions {
                retrain_every: Some(policy),
                ..Default::default()
            };
            let report = run_benchmark(&chain, &mut engines, split, options).unwrap();
            assert_eq!(report.rows[0].fits, fits, "policy {policy}");
            assert_eq!(report.rows[0].answered, 0);
        }
    }

    #[test]
    fn fits_only_see_blocks_before_the_test_height() {
        let chain = small_chain();
        let split = SplitSpec::new(5, 4);
        let heights = split.resolve(&chain).unwrap();
        let mut engines: Vec<Box<dyn FeeEngine>> = vec![Box::new(Probe {
            fits: vec![],
            max_seen_block: 0,
            tip: None,
        })];
        let options = BenchmarkOptions {
            retrain_every: Some(1),
            train_window: Some(2),
            ..Default::default()
        };
        let report = run_benchmark(&chain, &mut engines, split, options).unwrap();
        assert_eq!(report.rows[0].fits, 4);
        assert!(report.heights.train_end < heights.test_start);
    }

    #[test]
    fn parallel_matches_sequential() {
        let chain = small_chain();
        let run = |parallel| {
            let mut engines = crate::eval::engines_from_names(
                &["btcflow".into(), "bcore".into(), "oracle".into()],
                60_000,
                &FennConfig::default(),
                Refit::default(),
            )
            .unwrap();
            let options = BenchmarkOptions {
                parallel,
                ..Default::default()
            };
            let mut r = run_benchmark(&chain, &mut engines, SplitSpec::new(8, 3), options).unwrap();
            r.rows.iter_mut().for_each(|row| {
                row.latency = LatencyStats::default();
                row.train_seconds = 0.0;
            });
            r
        };
        let (a, b) = (run(false), run(true));
        assert_eq!(format!("{:?}", a.rows), format!("{:?}", b.rows));
        assert_eq!(a.predictions, b.predictions);
    }

    #[test]
    fn split_must_fit_chain() {
        let chain = small_chain();
        let mut engines: Vec<Box<dyn FeeEngine>> = vec![Box::new(OracleEngine)];
        assert!(run_benchmark(&chain, &mut engines, SplitSpec::new(10, 10), BenchmarkOptions::default()).is_err());
    }
}
