//! Acceptance checks. Runs sequentially so wall-clock figures are not
//! distorted by other tests, and prints one verdict line per check.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use feerate_lab::bcore::estimate_from_columns;
use feerate_lab::btcflow::{self, poisson_block_count, poisson_survival, FlowModel, U_MAX, U_MIN};
use feerate_lab::eval::{
    engines_from_names, feerate_to_fee, metrics, retrain_frequency_experiment, run_benchmark, BenchmarkOptions,
    BenchmarkReport, EngineRow, Refit, SplitSpec, RETRAIN_POLICIES,
};
use feerate_lab::fenn::{gradient_check, FennConfig, Variant};
use feerate_lab::ingest::{in_mempool_at, synth_generate, SynthConfig};
use feerate_lab::mslp::{build_training_instances, MslpConfig};
use feerate_lab::nn::layer_suite;

// Pinned tolerances and budgets.
const POISSON_TOLERANCE: f64 = 1e-3;
const POISSON_BUDGET: Duration = Duration::from_secs(1);
const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const GRAD_HIDDEN: usize = 16;
const GRAD_INSTANCES: usize = 6;
const ORACLE_INSTANCES: usize = 100;
const ORACLE_TOLERANCE: f64 = 1e-12;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const BENCH_SEED: u64 = 7;
const BENCH_BLOCK_WEIGHT: u64 = 180_000;
const BENCH_TX_RANGE: (usize, usize) = (40_000, 60_000);
const BENCH_BUDGET: Duration = Duration::from_secs(30 * 60);
const TRAIN_BUDGET_SECONDS: f64 = 600.0;
const FULL_EPOCHS: usize = 100;
const DRIFT_PER_BLOCK: f64 = 0.015;
const DRIFT_SEEDS: [u64; 5] = [7, 8, 9, 10, 11];
const DRIFT_WINDOW: u64 = 45;
const DRIFT_REFIT: Refit = Refit { epochs: 10, lr: 1e-4 };
const ALLOWED_INVERSIONS: usize = 1;
const METRIC_VECTORS: usize = 1000;
const METRIC_TOLERANCE: f64 = 1e-12;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn check(id: u32, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let start = Instant::now();
    let (pass, detail) = f();
    Verdict {
        id,
        name,
        pass,
        detail,
        elapsed: start.elapsed(),
    }
}

fn poisson_table() -> (bool, String) {
    let start = Instant::now();
    let expected: [(f64, [f64; 5]); 2] = [
        (1.0, [0.632, 0.264, 0.080, 0.019, 0.004]),
        (2.0, [0.864, 0.594, 0.323, 0.143, 0.053]),
    ];
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for (lambda, row) in expected {
        for (k, want) in row.iter().enumerate() {
            let got = poisson_survival(lambda, k as u32);
            worst = worst.max((got - want).abs());
            if (got - want).abs() >= POISSON_TOLERANCE {
                bad.push(format!("lambda {lambda} k {k}: {got:.5} vs {want}"));
            }
        }
    }
    for p in [0.8, 0.9] {
        let c = poisson_block_count(10.0, p);
        if c != 0 {
            bad.push(format!("block count for 10 min at p {p} is {c}, not 0"));
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= POISSON_BUDGET {
        bad.push(format!("took {elapsed:?}"));
    }
    (bad.is_empty(), if bad.is_empty() { format!("10 entries within {worst:.1e}, 2 block counts match") } else { bad.join("; ") })
}

fn gradient_suite() -> (bool, String) {
    let start = Instant::now();
    let mut results: Vec<(String, std::result::Result<f64, String>)> = layer_suite(BENCH_SEED)
        .into_iter()
        .map(|(name, r)| (name, Ok(r.max_rel_err)))
        .collect();
    for variant in Variant::ALL {
        let config = FennConfig {
            seq_hidden: GRAD_HIDDEN,
            head_hidden: [GRAD_HIDDEN, 8],
            ..FennConfig::new(variant)
        };
        let r = gradient_check(&config, GRAD_INSTANCES).map(|r| r.max_rel_err).map_err(|e| e.to_string());
        results.push((format!("fenn-{variant}"), r));
    }
    let mut worst = (0.0f64, String::new());
    let mut failures = Vec::new();
    for (name, r) in &results {
        match r {
            Ok(err) if *err < GRAD_TOLERANCE => {
                if *err > worst.0 {
                    worst = (*err, name.clone());
                }
            }
            Ok(err) => failures.push(format!("{name} {err:.2e}")),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let count = results.len();
    let elapsed = start.elapsed();
    if elapsed >= GRAD_BUDGET {
        failures.push(format!("took {elapsed:?}"));
    }
    let detail = format!("{count} graphs, worst {:.2e} ({})", worst.0, worst.1);
    if failures.is_empty() {
        (true, detail)
    } else {
        (false, format!("{detail}; failing: {}", failures.join(", ")))
    }
}

/// Transactions in a bucketed history, reduced to what the scan needs.
struct BucketTx {
    bucket: usize,
    feerate: f64,
    confirmed: bool,
    within_target: bool,
    still_waiting: bool,
}

/// Group boundaries found by trying every cut point below the current top,
/// computed straight from the transaction list.
fn bcore_by_cut_search(txs: &[BucketTx], n: usize, p1: f64, p2: f64) -> Option<f64> {
    let count = |lo: usize, hi: usize| txs.iter().filter(|t| t.confirmed && (lo..=hi).contains(&t.bucket)).count() as f64;
    let within = |lo: usize, hi: usize| {
        txs.iter()
            .filter(|t| t.within_target && (lo..=hi).contains(&t.bucket))
            .count() as f64
    };
    let waiting = |lo: usize, hi: usize| {
        txs.iter()
            .filter(|t| t.still_waiting && (lo..=hi).contains(&t.bucket))
            .count() as f64
    };
    let mut passing = None;
    let mut top = n as isize - 1;
    while top >= 0 {
        let hi = top as usize;
        let Some(lo) = (0..=hi).rev().find(|&lo| count(lo, hi) >= p1) else {
            break;
        };
        let gamma = within(lo, hi) / (count(lo, hi) + waiting(lo, hi));
        if gamma < p2 {
            break;
        }
        passing = Some((lo, hi));
        top = lo as isize - 1;
    }
    let (lo, hi) = passing?;
    let half = count(lo, hi) / 2.0;
    let slot = (lo..=hi).find(|&s| count(s, s) > 0.0 && count(lo, s) >= half)?;
    let sum: f64 = txs
        .iter()
        .filter(|t| t.confirmed && t.bucket == slot)
        .map(|t| t.feerate)
        .sum();
    Some(sum / count(slot, slot))
}

fn bcore_oracle(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let n = rng.random_range(1..=10);
    let m = rng.random_range(0..=50);
    let txs: Vec<BucketTx> = (0..m)
        .map(|_| {
            let bucket = rng.random_range(0..n);
            let confirmed = rng.random_bool(0.7);
            BucketTx {
                bucket,
                feerate: bucket as f64 + 1.0 + rng.random_range(0.0..1.0),
                confirmed,
                within_target: confirmed && rng.random_bool(0.6),
                still_waiting: !confirmed && rng.random_bool(0.5),
            }
        })
        .collect();
    let (mut ct, mut avg, mut conf, mut un) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for t in &txs {
        if t.confirmed {
            ct[t.bucket] += 1.0;
            avg[t.bucket] += t.feerate;
        }
        if t.within_target {
            conf[t.bucket] += 1.0;
        }
        if t.still_waiting {
            un[t.bucket] += 1.0;
        }
    }
    let p1 = rng.random_range(0.5..8.0);
    let p2 = rng.random_range(0.3..0.95);
    let got = estimate_from_columns(&ct, &avg, &conf, &un, p1, p2).ok().map(|g| g.feerate);
    let want = bcore_by_cut_search(&txs, n, p1, p2);
    match (got, want) {
        (None, None) => Ok(()),
        (Some(a), Some(b)) if (a - b).abs() <= ORACLE_TOLERANCE * b.abs() => Ok(()),
        _ => Err(format!("bcore n {n} m {m}: {got:?} vs {want:?}")),
    }
}

fn mslp_oracle(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let capacity = rng.random_range(3_000..15_000);
    let chain = synth_generate(&SynthConfig {
        n_blocks: rng.random_range(3..7),
        tx_arrival_rate: rng.random_range(0.5..2.0),
        block_weight_limit: capacity,
        seed: rng.random(),
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let config = MslpConfig::with_block(rng.random_range(1_000..capacity));
    let tip = chain.tip_height().expect("blocks");
    let mut got: Vec<(u64, usize, u32, u32, bool)> = build_training_instances(&chain, tip, &config)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|i| (i.height, i.tx_index, i.loc_b, i.loc_s, i.hit))
        .collect();
    let txs: Vec<_> = chain.transactions().collect();
    let mut want = Vec::new();
    for block in chain.blocks().iter().filter(|b| b.height < tip) {
        let h = block.height;
        for (i, tx) in txs.iter().enumerate() {
            let Some(c) = tx.confirm_height else { continue };
            if !in_mempool_at(tx, h) {
                continue;
            }
            let ahead: u64 = txs
                .iter()
                .filter(|o| in_mempool_at(o, h) && o.feerate >= tx.feerate)
                .map(|o| o.weight)
                .sum();
            let loc_b = (ahead / config.block) as u32 + 1;
            let loc_s = (ahead / config.slice) as u32 + 1;
            want.push((h, i, loc_b, loc_s, loc_b as u64 >= c - h));
        }
    }
    got.sort();
    want.sort();
    if got == want {
        Ok(())
    } else {
        Err(format!("mslp labels differ on a {}-tx chain", txs.len()))
    }
}

fn btcflow_oracle(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let mut flows = FlowModel::default();
    let mut inflow = vec![0.0; U_MAX + 1];
    let mut state = vec![0.0; U_MAX + 1];
    for _ in 0..rng.random_range(0..40) {
        let u = rng.random_range(U_MIN..=U_MAX);
        let (a, b) = (rng.random_range(0..5_000) as f64, rng.random_range(0..200_000) as f64);
        inflow[u] += a;
        state[u] += b;
        flows.set_inflow(u, inflow[u]);
        flows.set_state(u, state[u]);
    }
    let minutes = rng.random_range(1..=180) as f64;
    let outflow = match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1e12,
        _ => rng.random_range(0..6_000_000) as f64,
    };
    let got = btcflow::estimate(&flows, minutes, outflow);
    let demand = |u: usize| -> f64 { (u..=U_MAX).map(|v| minutes * inflow[v] + state[v]).sum() };
    let (want, low) = if outflow <= 0.0 {
        (U_MAX as f64, true)
    } else {
        match (U_MIN..=U_MAX).find(|&u| demand(u) <= outflow) {
            Some(u) => (u as f64, false),
            None => (U_MAX as f64, true),
        }
    };
    if got.feerate == want && got.low_confidence == low {
        Ok(())
    } else {
        Err(format!("flow: {got:?} vs ({want}, {low})"))
    }
}

fn oracle_equivalence() -> (bool, String) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(BENCH_SEED);
    let mut failures = Vec::new();
    let cases: [(&str, fn(&mut ChaCha8Rng) -> std::result::Result<(), String>); 3] =
        [("bcore", bcore_oracle), ("mslp", mslp_oracle), ("btcflow", btcflow_oracle)];
    for (name, case) in cases {
        let bad = (0..ORACLE_INSTANCES).filter_map(|_| case(&mut rng).err()).collect::<Vec<_>>();
        if !bad.is_empty() {
            failures.push(format!("{name}: {} mismatches, first {}", bad.len(), bad[0]));
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= ORACLE_BUDGET {
        failures.push(format!("took {elapsed:?}"));
    }
    if failures.is_empty() {
        (true, format!("3 x {ORACLE_INSTANCES} instances agree"))
    } else {
        (false, failures.join("; "))
    }
}

fn row<'a>(report: &'a BenchmarkReport, name: &str) -> &'a EngineRow {
    report.row(name).unwrap_or_else(|| panic!("{name} missing from report"))
}

fn benchmark() -> (BenchmarkReport, usize, Duration) {
    let start = Instant::now();
    let chain = synth_generate(&SynthConfig {
        seed: BENCH_SEED,
        block_weight_limit: BENCH_BLOCK_WEIGHT,
        ..SynthConfig::default()
    })
    .expect("synthetic chain");
    let names: Vec<String> = [
        "btcflow",
        "bcore",
        "mslp",
        "fenn-adv",
        "fenn-self",
        "fenn-lstm",
        "fenn-wht",
        "fenn-lstmadv",
        "fenn-adv-memtx",
        "fenn-adv-tx",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let fenn = FennConfig {
        epochs: FULL_EPOCHS,
        seed: BENCH_SEED,
        ..FennConfig::default()
    };
    let mut engines = engines_from_names(&names, BENCH_BLOCK_WEIGHT, &fenn, Refit::default()).expect("engines");
    let options = BenchmarkOptions {
        keep_predictions: false,
        ..BenchmarkOptions::default()
    };
    let report = run_benchmark(&chain, &mut engines, SplitSpec::default(), options).expect("benchmark");
    (report, chain.tx_count(), start.elapsed())
}

fn end_to_end_ordering(report: &BenchmarkReport, txs: usize, elapsed: Duration) -> (bool, String) {
    let adv = row(report, "fenn-adv");
    let flow = row(report, "btcflow");
    let mut bad = Vec::new();
    if !(BENCH_TX_RANGE.0..=BENCH_TX_RANGE.1).contains(&txs) {
        bad.push(format!("{txs} transactions"));
    }
    for other in ["btcflow", "bcore", "mslp"] {
        let o = row(report, other);
        if !(adv.rmse < o.rmse && adv.mape < o.mape) {
            bad.push(format!("adv does not beat {other}"));
        }
    }
    for other in ["bcore", "mslp", "fenn-adv"] {
        let o = row(report, other);
        if !(flow.rmse > o.rmse && flow.mape > o.mape) {
            bad.push(format!("btcflow not worse than {other}"));
        }
    }
    let memtx = row(report, "fenn-adv-memtx");
    let tx = row(report, "fenn-adv-tx");
    if !(adv.rmse <= memtx.rmse && memtx.rmse <= tx.rmse) {
        bad.push("ablation rmse order broken".into());
    }
    if elapsed >= BENCH_BUDGET {
        bad.push(format!("took {elapsed:?}"));
    }
    let detail = ["fenn-adv", "bcore", "mslp", "btcflow", "fenn-adv-memtx", "fenn-adv-tx"]
        .iter()
        .map(|n| {
            let r = row(report, n);
            format!("{n} {:.0}/{:.1}%", r.rmse, r.mape)
        })
        .collect::<Vec<_>>()
        .join(", ");
    if bad.is_empty() {
        (true, format!("{txs} txs; {detail}"))
    } else {
        (false, format!("{}; {detail}", bad.join("; ")))
    }
}

fn training_time(report: &BenchmarkReport) -> (bool, String) {
    let secs = |n: &str| row(report, n).train_seconds;
    let mut bad = Vec::new();
    for fast in ["fenn-adv", "fenn-self"] {
        for slow in ["fenn-lstm", "fenn-wht", "fenn-lstmadv"] {
            if !(secs(fast) < secs(slow)) {
                bad.push(format!("{fast} {:.1}s >= {slow} {:.1}s", secs(fast), secs(slow)));
            }
        }
    }
    for n in ["fenn-adv", "fenn-self", "fenn-lstm", "fenn-wht", "fenn-lstmadv"] {
        if !(secs(n) < TRAIN_BUDGET_SECONDS) {
            bad.push(format!("{n} took {:.1}s", secs(n)));
        }
    }
    let detail = ["fenn-adv", "fenn-self", "fenn-lstm", "fenn-wht", "fenn-lstmadv"]
        .iter()
        .map(|n| format!("{n} {:.1}s", secs(n)))
        .collect::<Vec<_>>()
        .join(", ");
    (bad.is_empty(), if bad.is_empty() { detail } else { format!("{}; {detail}", bad.join("; ")) })
}

fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}

fn retraining_frequency() -> (bool, String) {
    let fenn = FennConfig {
        epochs: FULL_EPOCHS,
        seed: BENCH_SEED,
        ..FennConfig::default()
    };
    let mut rmse = vec![0.0; RETRAIN_POLICIES.len()];
    let mut mape = vec![0.0; RETRAIN_POLICIES.len()];
    for seed in DRIFT_SEEDS {
        let mut config = SynthConfig {
            seed,
            block_weight_limit: BENCH_BLOCK_WEIGHT,
            ..SynthConfig::default()
        };
        config.feerate.drift_per_block = DRIFT_PER_BLOCK;
        let chain = synth_generate(&config).expect("drift chain");
        let results = retrain_frequency_experiment(
            &chain,
            &fenn,
            DRIFT_REFIT,
            SplitSpec::default(),
            &RETRAIN_POLICIES,
            Some(DRIFT_WINDOW),
        )
        .expect("retrain experiment");
        for (i, r) in results.iter().enumerate() {
            rmse[i] += r.row.rmse / DRIFT_SEEDS.len() as f64;
            mape[i] += r.row.mape / DRIFT_SEEDS.len() as f64;
        }
    }
    let (ri, mi) = (inversions(&rmse), inversions(&mape));
    let fmt = |v: &[f64], digits: usize| {
        v.iter()
            .map(|x| format!("{x:.digits$}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let detail = format!(
        "policies {:?}; mean rmse [{}] ({ri} inversions); mean mape [{}] ({mi} inversions)",
        RETRAIN_POLICIES,
        fmt(&rmse, 0),
        fmt(&mape, 2)
    );
    (ri <= ALLOWED_INVERSIONS && mi <= ALLOWED_INVERSIONS, detail)
}

fn reference_rmse(y: &[f64], p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..y.len() {
        let d = p[i] - y[i];
        acc += d * d;
    }
    (acc / y.len() as f64).sqrt()
}

fn reference_mape(y: &[f64], p: &[f64]) -> f64 {
    let terms: Vec<f64> = y
        .iter()
        .zip(p)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, q)| (t - q).abs() / t.abs())
        .collect();
    terms.iter().sum::<f64>() / terms.len() as f64 * 100.0
}

fn metric_fidelity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(BENCH_SEED);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for _ in 0..METRIC_VECTORS {
        let n = rng.random_range(1..300);
        let scale = 10f64.powi(rng.random_range(0..7));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..1000.0) * scale).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1000.0) * scale).collect();
        let m = metrics(&y, &p).expect("non-empty");
        let er = (m.rmse - reference_rmse(&y, &p)).abs() / reference_rmse(&y, &p).max(f64::MIN_POSITIVE);
        let em = (m.mape - reference_mape(&y, &p)).abs() / reference_mape(&y, &p).max(f64::MIN_POSITIVE);
        worst = worst.max(er).max(em);
    }
    if !(worst <= METRIC_TOLERANCE) {
        bad.push(format!("relative error {worst:.2e}"));
    }
    let mut mismatched = 0;
    for _ in 0..METRIC_VECTORS {
        let w: u64 = rng.random_range(1..4_000_000);
        let r: u64 = rng.random_range(0..100_000);
        if feerate_to_fee(w, r as f64) != (w * r) as f64 / 4.0 {
            mismatched += 1;
        }
    }
    if mismatched > 0 {
        bad.push(format!("{mismatched} fee conversions inexact"));
    }
    let detail = format!("worst relative error {worst:.1e}; fee conversion exact on {METRIC_VECTORS} integer pairs");
    (bad.is_empty(), if bad.is_empty() { detail } else { format!("{}; {detail}", bad.join("; ")) })
}

fn main() {
    let mut verdicts = vec![
        check(1, "poisson survival table", poisson_table),
        check(2, "gradient suite", gradient_suite),
        check(3, "oracle equivalence", oracle_equivalence),
    ];
    let (report, txs, bench_elapsed) = benchmark();
    verdicts.push(Verdict {
        elapsed: bench_elapsed,
        ..check(4, "end-to-end ordering", || end_to_end_ordering(&report, txs, bench_elapsed))
    });
    verdicts.push(check(5, "training time", || training_time(&report)));
    verdicts.push(check(6, "retraining frequency", retraining_frequency));
    verdicts.push(check(7, "metric fidelity", metric_fidelity));

    println!();
    for v in &verdicts {
        println!(
            "acceptance {} {:<24} {} ({:.1}s) {}",
            v.id,
            v.name,
            if v.pass { "PASS" } else { "FAIL" },
            v.elapsed.as_secs_f64(),
            v.detail
        );
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} checks passed", verdicts.len());
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
