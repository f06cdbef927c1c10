use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coadapt_core::analysis::MetricTrace;
use coadapt_core::envdata::OfflineDataset;

fn coadapt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coadapt"))
        .args(args)
        .env("COADAPT_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| e.into_path())
        .collect();
    out.sort();
    out
}

/// A fast smoke run; returns the output directory's trace paths.
fn smoke_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--preset", "smoke", "--out", path_str(out)];
    args.extend_from_slice(extra);
    coadapt(&args)
}

#[test]
fn list_presets_names_the_shipped_experiments() {
    let o = coadapt(&["list-presets"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["grid16-sparse-256", "sarsa-vs-td", "target-sweep", "dr3-effect", "smoke"] {
        assert!(text.contains(name), "{name} missing from {text}");
    }
}

#[test]
fn gen_data_writes_the_256_transition_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = coadapt(&["gen-data", "--preset", "grid16-sparse-256", "--seed", "4", "--out", path_str(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = OfflineDataset::read(&dir.path().join("grid16-sparse-256-seed4.dataset")).unwrap();
    assert_eq!(data.len(), 256);
    assert_eq!(data.meta().policy, "eps-optimal(p_opt=0.7)");
    assert_eq!(data.meta().seed, 4);
    let config = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(config.contains("data.p_opt = 0.7"));
}

#[test]
fn zero_steps_gives_header_only_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoke_run(dir.path(), &["--set", "train.total_steps=0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = MetricTrace::read(&dir.path().join("smoke/seed0.csv")).unwrap();
    assert!(trace.records().is_empty());
    assert_eq!(trace.provenance_value("config.train.total_steps"), Some("0"));
}

#[test]
fn sweep_preset_emits_one_trace_per_variant_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = coadapt(&[
        "train",
        "--preset",
        "sarsa-vs-td",
        "--set",
        "train.total_steps=100",
        "--set",
        "train.eval_every=50",
        "--set",
        "train.hidden=8",
        "--jobs",
        "3",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let traces = csv_files(dir.path());
    assert_eq!(traces.len(), 12);
    let t = MetricTrace::read(&dir.path().join("expected/seed2.csv")).unwrap();
    assert_eq!(t.provenance_value("algorithm"), Some("expected"));
    assert_eq!(t.provenance_value("task"), Some("sarsa-vs-td"));
    assert_eq!(t.provenance_value("seed"), Some("2"));
    assert_eq!(t.records().len(), 2);

    let report = dir.path().join("report");
    let o = coadapt(&["analyze", path_str(dir.path()), "--metric", "final_loss", "--out", path_str(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cmp = fs::read_to_string(report.join("comparison.csv")).unwrap();
    let pairs: Vec<String> = cmp
        .lines()
        .skip(2)
        .map(|l| l.rsplitn(2, ',').nth(1).unwrap().to_string())
        .collect();
    let golden = [
        "expected,max", "expected,mc", "expected,sarsa", "max,expected", "max,mc", "max,sarsa",
        "mc,expected", "mc,max", "mc,sarsa", "sarsa,expected", "sarsa,max", "sarsa,mc",
    ];
    assert_eq!(pairs, golden);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(smoke_run(a.path(), &["--seed", "3"]).status.success());
    assert!(smoke_run(b.path(), &["--seed", "3", "--jobs", "2"]).status.success());
    for name in ["smoke/seed3.csv", "smoke/seed3.params", "smoke/seed3.dataset", "config.txt"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "train.lr = 0.1\ntrain.bogus = 1\n").unwrap();
    let o = coadapt(&["train", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.bogus"));

    let o = coadapt(&["train", "--preset", "nope", "--out", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_coadapt"))
        .args(["list-presets"])
        .env("COADAPT_LOG", "loud")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dataset_mismatch_is_caught_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let o = coadapt(&["gen-data", "--preset", "smoke", "--set", "env.gamma=0.99", "--out", path_str(&data_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let file = data_dir.join("smoke-seed0.dataset");
    let out = dir.path().join("run");
    let set = format!("data.file={}", file.display());
    let o = smoke_run(&out, &["--set", &set]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma"));
    assert!(!out.exists());

    // the matching config trains on the file
    let o = smoke_run(&out, &["--set", &set, "--set", "env.gamma=0.99"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn all_diverged_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoke_run(dir.path(), &["--set", "train.lr=1e12", "--set", "train.selector=max"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let trace = MetricTrace::read(&dir.path().join("smoke/seed0.csv")).unwrap();
    assert!(trace.diverged());
}

#[test]
fn analyze_summarizes_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    assert!(smoke_run(&dir.path().join("runs"), &[]).status.success());
    let trace = dir.path().join("runs/smoke/seed0.csv");
    let out = dir.path().join("report");

    let o = coadapt(&["analyze", path_str(&trace), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let last = MetricTrace::read(&trace).unwrap().last().unwrap().clone();
    let dot_row = format!("smoke,smoke,final_feat_dot,1,{0},{0},{0},{0}", last.feat_dot);
    assert!(summary.contains(&dot_row), "{summary}");
    assert!(summary.contains("stratified=false"));

    let a = format!("a={}", trace.display());
    let b = format!("b={}", trace.display());
    let o = coadapt(&["analyze", &a, &b, "--metric", "final_loss", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cmp = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(cmp.ends_with("alg_a,alg_b,p_improve\na,b,0.5\nb,a,0.5\n"), "{cmp}");

    let first = fs::read(out.join("summary.csv")).unwrap();
    let o = coadapt(&["analyze", &b, &a, "--metric", "final_loss", "--out", path_str(&out)]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("summary.csv")).unwrap(), first);
}

#[test]
fn analyze_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(
        &bad,
        "# task=t\nstep,loss,mean_q,feat_dot,cosine,srank,eval_return,r_td,diverged\n1,0.5,0,1,0,2,0,0,0\n2,zz,0,1,0,2,0,0,0\n",
    )
    .unwrap();
    let o = coadapt(&["analyze", path_str(&bad), "--out", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let o = coadapt(&["analyze", path_str(&dir.path().join("missing.csv")), "--out", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn stability_on_feature_files() {
    let dir = tempfile::tempdir().unwrap();
    let scalar = dir.path().join("scalar.csv");
    fs::write(&scalar, "phi_0,next_0\n1,2\n").unwrap();
    let o = coadapt(&["stability", "--features", path_str(&scalar), "--gamma", "0.9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("verdict: non-convergent"));
    assert!(text.contains("trace condition: holds"));
    assert!(text.contains("eigenvalues:"));

    let ident = dir.path().join("ident.csv");
    fs::write(&ident, "# gamma=0.9\nphi_0,phi_1,next_0,next_1,reward\n1,0,1,0,1\n0,1,0,1,0\n").unwrap();
    let o = coadapt(&["stability", "--features", path_str(&ident), "--simulate", "--steps", "20000", "--eta", "0.01"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("verdict: stable"));
    assert!(text.contains("simulation: converged"));

    let zero = dir.path().join("zero.csv");
    fs::write(&zero, "phi_0,next_0\n0,0\n").unwrap();
    let o = coadapt(&["stability", "--features", path_str(&zero), "--gamma", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("degenerate"));

    let o = coadapt(&["stability", "--features", path_str(&zero)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stability_on_a_trained_network() {
    let dir = tempfile::tempdir().unwrap();
    assert!(smoke_run(dir.path(), &[]).status.success());
    let dump = dir.path().join("features.csv");
    let o = coadapt(&[
        "stability",
        "--dataset",
        path_str(&dir.path().join("smoke/seed0.dataset")),
        "--params",
        path_str(&dir.path().join("smoke/seed0.params")),
        "--selector",
        "expected",
        "--dump-features",
        path_str(&dump),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("transitions: 64  feature dim: 8"));
    let again = coadapt(&["stability", "--features", path_str(&dump)]);
    assert!(again.status.success());
    assert_eq!(stdout(&again), stdout(&o));
}
