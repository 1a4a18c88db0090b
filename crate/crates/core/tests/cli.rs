use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_feerate-lab"));
    cmd.env_remove("FEERATE_LAB_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synth_small(dir: &Path, seed: Option<&str>) -> Output {
    let mut args = vec!["synth", "--blocks", "30", "--tx-rate", "6", "--block-weight", "60000", "--out"];
    let d = dir.to_str().unwrap();
    args.push(d);
    if let Some(s) = seed {
        args.extend(["--seed", s]);
    }
    run(&args)
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn run_config_argv(dir: &Path) -> Vec<String> {
    let v: serde_json::Value = serde_json::from_slice(&read(dir.join("run_config.json"))).unwrap();
    v["argv"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap().to_string())
        .collect()
}

fn with_out(argv: &[String], out: &Path) -> Vec<String> {
    let mut argv = argv.to_vec();
    let i = argv.iter().position(|a| a == "--out").expect("--out present");
    argv[i + 1] = out.to_str().unwrap().to_string();
    argv
}

fn single_number(out: &Output) -> f64 {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1, "stdout was {stdout:?}");
    lines[0].trim().parse().unwrap_or_else(|_| panic!("not a number: {:?}", lines[0]))
}

#[test]
fn help_and_bad_usage_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["estimate", "--help"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["estimate", "--engine", "bcore"])), 1);
}

#[test]
fn missing_data_is_a_user_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nothing-here");
    let out = run(&["estimate", "--engine", "bcore", "--data", missing.to_str().unwrap(), "--blocks", "2"]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn failed_gradient_check_exits_with_two() {
    let out = run(&["gradcheck", "--tolerance", "0", "--hidden", "4"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_passes_at_default_tolerance() {
    let out = run(&["gradcheck", "--hidden", "8"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_dump_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    assert_eq!(code(&synth_small(&a, None)), 0);
    for f in ["chain.csv", "txs.csv", "synth_config.json", "run_config.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let argv = run_config_argv(&a);
    assert!(argv.windows(2).any(|w| w[0] == "--seed" && w[1] == "7"), "{argv:?}");

    let b = tmp.path().join("b");
    let out = bin().args(with_out(&argv, &b)).output().unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(read(a.join("chain.csv")), read(b.join("chain.csv")));
    assert_eq!(read(a.join("txs.csv")), read(b.join("txs.csv")));
}

#[test]
fn seed_environment_variable_sets_the_default() {
    let tmp = TempDir::new().unwrap();
    let env_dir = tmp.path().join("env");
    let out = bin()
        .args(["synth", "--blocks", "20", "--tx-rate", "6", "--out", env_dir.to_str().unwrap()])
        .env("FEERATE_LAB_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let explicit = tmp.path().join("explicit");
    let default = tmp.path().join("default");
    let blocks = ["synth", "--blocks", "20", "--tx-rate", "6", "--out"];
    let mut args: Vec<&str> = blocks.to_vec();
    args.extend([explicit.to_str().unwrap(), "--seed", "11"]);
    assert_eq!(code(&run(&args)), 0);
    let mut args: Vec<&str> = blocks.to_vec();
    args.push(default.to_str().unwrap());
    assert_eq!(code(&run(&args)), 0);

    assert_eq!(read(env_dir.join("txs.csv")), read(explicit.join("txs.csv")));
    assert_ne!(read(env_dir.join("txs.csv")), read(default.join("txs.csv")));
    let argv = run_config_argv(&env_dir);
    assert!(argv.windows(2).any(|w| w[0] == "--seed" && w[1] == "11"), "{argv:?}");

    let bad = bin()
        .args(["synth", "--blocks", "20", "--out", tmp.path().join("bad").to_str().unwrap()])
        .env("FEERATE_LAB_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 1);
}

#[test]
fn ingest_round_trips_a_dump() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    assert_eq!(code(&synth_small(&src, Some("3"))), 0);
    let dst = tmp.path().join("dst");
    let out = run(&[
        "ingest",
        "--input",
        src.to_str().unwrap(),
        "--out",
        dst.to_str().unwrap(),
        "--mempool-at",
        "620010",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(src.join("chain.csv")), read(dst.join("chain.csv")));
    assert_eq!(read(src.join("txs.csv")), read(dst.join("txs.csv")));
    assert!(dst.join("mempool.csv").is_file());
    assert!(dst.join("summary.json").is_file());
}

#[test]
fn estimate_prints_one_number_per_engine() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("chain");
    assert_eq!(code(&synth_small(&data, None)), 0);
    let d = data.to_str().unwrap();
    let flow = run(&["estimate", "--engine", "btcflow", "--data", d, "--minutes", "30"]);
    assert_eq!(code(&flow), 0, "{}", String::from_utf8_lossy(&flow.stderr));
    assert!(single_number(&flow) >= 0.0);
    let core = run(&["estimate", "--engine", "bcore", "--data", d, "--blocks", "3"]);
    assert_eq!(code(&core), 0, "{}", String::from_utf8_lossy(&core.stderr));
    assert!(single_number(&core) > 0.0);
    let out_of_range = run(&["estimate", "--engine", "bcore", "--data", d, "--blocks", "5000"]);
    assert_eq!(code(&out_of_range), 1);
}

#[test]
fn trained_fenn_checkpoint_answers_estimates() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("chain");
    assert_eq!(code(&synth_small(&data, None)), 0);
    let model_dir = tmp.path().join("model");
    let out = run(&[
        "train",
        "--engine",
        "fenn",
        "--data",
        data.to_str().unwrap(),
        "--out",
        model_dir.to_str().unwrap(),
        "--epochs",
        "3",
        "--variant",
        "self",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = model_dir.join("model.ckpt");
    assert!(ckpt.is_file());
    assert!(model_dir.join("train_report.json").is_file());
    let est = run(&[
        "estimate",
        "--engine",
        "fenn",
        "--data",
        data.to_str().unwrap(),
        "--model",
        ckpt.to_str().unwrap(),
        "--blocks",
        "2",
    ]);
    assert_eq!(code(&est), 0, "{}", String::from_utf8_lossy(&est.stderr));
    assert!(single_number(&est) >= 0.0);

    let no_model = run(&["estimate", "--engine", "fenn", "--data", data.to_str().unwrap(), "--blocks", "2"]);
    assert_eq!(code(&no_model), 1);
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn evaluate_writes_reports_and_reproduces_from_run_config() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("chain");
    assert_eq!(code(&synth_small(&data, None)), 0);
    let out_a: PathBuf = tmp.path().join("eval-a");
    let out = run(&[
        "evaluate",
        "--engines",
        "btcflow,bcore,oracle,fenn-adv",
        "--data",
        data.to_str().unwrap(),
        "--train",
        "22",
        "--test",
        "6",
        "--epochs",
        "3",
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let rows = csv_rows(&out_a.join("report.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(names, ["btcflow", "bcore", "oracle", "fenn-adv"]);
    let oracle = &rows[2];
    assert_eq!(oracle.get(1).unwrap().parse::<f64>().unwrap(), 0.0);
    assert!(out_a.join("timing.csv").is_file());
    assert!(!csv_rows(&out_a.join("predictions.csv")).is_empty());

    let out_b = tmp.path().join("eval-b");
    let argv = with_out(&run_config_argv(&out_a), &out_b);
    let again = bin().args(&argv).output().unwrap();
    assert_eq!(code(&again), 0);
    assert_eq!(read(out_a.join("report.csv")), read(out_b.join("report.csv")));
    assert_eq!(read(out_a.join("predictions.csv")), read(out_b.join("predictions.csv")));
}

#[test]
fn evaluate_rejects_a_split_longer_than_the_chain() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("chain");
    assert_eq!(code(&synth_small(&data, None)), 0);
    let out = run(&["evaluate", "--engines", "bcore", "--data", data.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn compare_retrain_writes_one_row_per_policy() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("chain");
    assert_eq!(code(&synth_small(&data, None)), 0);
    let out_dir = tmp.path().join("cmp");
    let out = run(&[
        "compare",
        "--what",
        "retrain",
        "--data",
        data.to_str().unwrap(),
        "--train",
        "22",
        "--test",
        "6",
        "--policies",
        "1,3,6",
        "--epochs",
        "2",
        "--retrain-epochs",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_rows(&out_dir.join("compare.csv")).len(), 3);
}
