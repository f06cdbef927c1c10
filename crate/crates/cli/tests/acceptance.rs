//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use coadapt_cli::config::ExperimentConfig;
use coadapt_cli::experiment::{generate_dataset, plan, run_all, write_outputs, RunOutput};
use coadapt_cli::presets::preset_doc;
use coadapt_core::agents::{
    dr3_generalized, dr3_penalty, BackupSelector, ErrorLoss, LossHead, OptimizerKind, TrainConfig, Trainer,
};
use coadapt_core::analysis::{
    coadaptation_trace_test, lyapunov_sigma, simulate_linear_td, srank, stability_spectrum, FeaturePair,
    LyapunovStop, Verdict, DEFAULT_STABILITY_TOL,
};
use coadapt_core::envdata::OfflineDataset;
use coadapt_core::numerics::{finite_diff_grad, mlp_backward, HeadMode, Matrix, MlpParams};
use coadapt_core::stats::{iqm, prob_improvement, RunScores};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed <= limit
}

fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

// ---------------------------------------------------------------- 1

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let multi = case % 2 == 0;
        let obs = rng.random_range(2..8);
        let h1 = rng.random_range(2..10);
        let h2 = rng.random_range(2..10);
        let (mode, sizes) = if multi {
            (HeadMode::StateInputMultiHead, vec![obs, h1, h2, 5])
        } else {
            (HeadMode::StateActionInputScalar, vec![obs + 5, h1, h2, 1])
        };
        let mut params = MlpParams::init(&sizes, mode, &mut rng).unwrap();
        for b in params.slices_mut().skip(1).step_by(2) {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let input: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let upstream: Vec<f64> = (0..sizes[3]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact = mlp_backward(&params, &input, &upstream).unwrap();
        let numeric = finite_diff_grad(&params, &input, &upstream, 1e-6).unwrap();
        worst = worst.max(exact.max_relative_error(&numeric, 1e-6));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && within(Duration::from_secs(10), elapsed),
        format!("max relative error {worst:.2e} over 100 networks in {:.2}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn lyapunov_closed_form() -> Outcome {
    let stop = LyapunovStop::Tolerance {
        tol: 1e-14,
        max_iters: 1_000_000,
    };
    let one = Matrix::identity(1);
    let scalar = lyapunov_sigma(&one, &one, 0.1, stop).unwrap().sigma[(0, 0)];
    // η²m / (1 − (1 − ηg)²) = 0.01 / 0.19 = 0.0526316 to seven places
    let scalar_ok = (scalar - 0.01 / 0.19).abs() <= 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let eta = 0.1;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let b = uniform_matrix(4, 4, -1.0, 1.0, &mut rng);
        let skew = b.sub(&b.transpose()).unwrap().scale(0.5);
        let sym = {
            let r = uniform_matrix(4, 4, -0.3, 0.3, &mut rng);
            r.matmul(&r.transpose()).unwrap()
        };
        let g = Matrix::identity(4).add(&skew).unwrap().add(&sym).unwrap();
        let r = uniform_matrix(4, 4, -1.0, 1.0, &mut rng);
        let m = r.matmul(&r.transpose()).unwrap();
        let sigma = lyapunov_sigma(&g, &m, eta, stop).unwrap().sigma;
        // independent residual of Σ = (I − ηG)Σ(I − ηG)ᵀ + η²M
        let a = Matrix::identity(4).sub(&g.scale(eta)).unwrap();
        let rhs = a
            .matmul(&sigma)
            .unwrap()
            .matmul(&a.transpose())
            .unwrap()
            .add(&m.scale(eta * eta))
            .unwrap();
        worst = worst.max(sigma.sub(&rhs).unwrap().frobenius_norm());
    }
    outcome(
        scalar_ok && worst < 1e-8,
        format!("scalar sigma {scalar:.10}, worst 4x4 residual {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- 3, 4

fn random_instances() -> Vec<(FeaturePair, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let gammas = [0.5, 0.9, 0.99];
    (0..500)
        .map(|_| {
            let n = rng.random_range(1..=6);
            let d = rng.random_range(1..=8);
            let gamma = gammas[rng.random_range(0..3)];
            let phi = uniform_matrix(n, d, -1.0, 1.0, &mut rng);
            let noise = uniform_matrix(n, d, -1.0, 1.0, &mut rng);
            // half the instances align φ' with φ so the trace condition is exercised
            let next = if rng.random_bool(0.5) {
                let c = rng.random_range(0.0..1.5 / gamma);
                phi.scale(c).add(&noise.scale(0.3)).unwrap()
            } else {
                noise
            };
            let rewards = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            (FeaturePair::new(phi, next, gamma).unwrap(), rewards)
        })
        .collect()
}

fn implication_suite(instances: &[(FeaturePair, Vec<f64>)]) -> Outcome {
    let start = Instant::now();
    let mut holds = 0;
    let mut counterexamples = 0;
    for (pair, _) in instances {
        // Σ⟨φ,φ'⟩ ≥ Σ‖φ‖²/γ, recomputed directly
        let mut dot = 0.0;
        let mut sq = 0.0;
        for i in 0..pair.len() {
            for k in 0..pair.dim() {
                dot += pair.phi()[(i, k)] * pair.phi_next()[(i, k)];
                sq += pair.phi()[(i, k)] * pair.phi()[(i, k)];
            }
        }
        let condition = dot >= sq / pair.gamma();
        assert_eq!(condition, coadaptation_trace_test(pair).unwrap());
        if condition {
            holds += 1;
            if stability_spectrum(pair, DEFAULT_STABILITY_TOL).unwrap().verdict == Verdict::Stable {
                counterexamples += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        counterexamples == 0 && within(Duration::from_secs(30), elapsed),
        format!(
            "trace condition held on {holds}/500 instances, {counterexamples} counterexamples, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn spectral_vs_simulation(instances: &[(FeaturePair, Vec<f64>)]) -> Outcome {
    let start = Instant::now();
    let (mut total, mut agree, mut clear, mut clear_agree) = (0, 0, 0, 0);
    for (pair, rewards) in instances {
        let report = stability_spectrum(pair, DEFAULT_STABILITY_TOL).unwrap();
        if report.verdict == Verdict::Borderline {
            continue;
        }
        let run = simulate_linear_td(pair, rewards, 1e-3, 200_000).unwrap();
        let ok = (report.verdict == Verdict::Stable) == run.converged;
        total += 1;
        agree += usize::from(ok);
        if report.min_real_part.abs() > 0.05 {
            clear += 1;
            clear_agree += usize::from(ok);
        }
    }
    let elapsed = start.elapsed();
    let overall = agree as f64 / total.max(1) as f64;
    outcome(
        clear_agree == clear && overall >= 0.95 && within(Duration::from_secs(300), elapsed),
        format!(
            "agreement {agree}/{total} overall, {clear_agree}/{clear} with |min Re| > 0.05, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn srank_exactness() -> Outcome {
    let delta = 0.01;
    let identity = srank(&Matrix::identity(100), delta).unwrap();
    let u: Vec<f64> = (0..7).map(|i| i as f64 - 2.5).collect();
    let v: Vec<f64> = (0..5).map(|i| 1.0 + i as f64).collect();
    let rank_one = srank(&Matrix::outer(&u, &v), delta).unwrap();
    let diag = srank(&Matrix::diag(&[10.0, 1.0, 1.0]), delta).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut violations = 0;
    for _ in 0..100 {
        let rows = rng.random_range(1..12);
        let cols = rng.random_range(1..12);
        let a = uniform_matrix(rows, cols, -2.0, 2.0, &mut rng);
        let base = srank(&a, delta).unwrap();
        let mut r: Vec<usize> = (0..rows).collect();
        r.shuffle(&mut rng);
        let mut c: Vec<usize> = (0..cols).collect();
        c.shuffle(&mut rng);
        let permuted = a.select_rows(&r).transpose().select_rows(&c).transpose();
        let scaled = a.scale(rng.random_range(0.01..100.0));
        if srank(&permuted, delta).unwrap() != base || srank(&scaled, delta).unwrap() != base {
            violations += 1;
        }
    }
    outcome(
        identity == 99 && rank_one == 1 && diag == 3 && violations == 0,
        format!("identity {identity}, rank-one {rank_one}, diag {diag}, {violations} invariance violations"),
    )
}

// ---------------------------------------------------------------- 6, 7

fn preset_runs(name: &str) -> (ExperimentConfig, Vec<RunOutput>, Duration) {
    let cfg = ExperimentConfig::from_doc(&preset_doc(name).unwrap()).unwrap();
    let start = Instant::now();
    let runs = run_all(&plan(&cfg).unwrap(), 1).unwrap();
    (cfg, runs, start.elapsed())
}

fn final_of<'a>(runs: &'a [RunOutput], label: &str, seed: u64) -> &'a coadapt_core::analysis::Checkpoint {
    runs.iter()
        .find(|r| r.label == label && r.seed == seed)
        .and_then(|r| r.trace.last())
        .expect("run has a final checkpoint")
}

fn coadaptation_reproduction() -> Outcome {
    let (cfg, runs, elapsed) = preset_runs("coadaptation");
    let mut wins = 0;
    let mut losses_ok = true;
    let mut parts = Vec::new();
    for &seed in &cfg.seeds {
        let mc = final_of(&runs, "mc", seed);
        let sarsa = final_of(&runs, "sarsa", seed);
        let expected = final_of(&runs, "expected", seed);
        if expected.feat_dot > sarsa.feat_dot {
            wins += 1;
        }
        let ok = |l: f64| l.is_finite() && l < 10.0 * mc.loss;
        losses_ok &= ok(sarsa.loss) && ok(expected.loss);
        parts.push(format!(
            "seed {seed}: dot {:.3}/{:.3}, loss {:.1e}/{:.1e} vs mc {:.1e}",
            expected.feat_dot, sarsa.feat_dot, expected.loss, sarsa.loss, mc.loss
        ));
    }
    let per_seed = elapsed / cfg.seeds.len() as u32;
    outcome(
        wins >= 4 && losses_ok && within(Duration::from_secs(20 * 60), per_seed),
        format!(
            "expected > sarsa in {wins}/5 seeds, losses under 10x mc: {losses_ok}, {:.0}s per seed [{}]",
            per_seed.as_secs_f64(),
            parts.join("; ")
        ),
    )
}

fn dr3_effect() -> Outcome {
    let (cfg, runs, elapsed) = preset_runs("dr3-effect");
    let mut lower = 0;
    let mut srank_ok = 0;
    let mut parts = Vec::new();
    for &seed in &cfg.seeds {
        let off = final_of(&runs, "dr3_coef=0", seed);
        let on = final_of(&runs, "dr3_coef=0.01", seed);
        // a diverged run has unbounded features
        let dot = |c: &coadapt_core::analysis::Checkpoint| if c.diverged { f64::INFINITY } else { c.feat_dot };
        if dot(on) < dot(off) {
            lower += 1;
        }
        if !on.diverged && (off.diverged || on.srank >= off.srank) {
            srank_ok += 1;
        }
        parts.push(format!(
            "seed {seed}: dot {:.3}/{:.3}, srank {}/{}",
            dot(on),
            dot(off),
            on.srank,
            off.srank
        ));
    }
    outcome(
        lower == cfg.seeds.len() && srank_ok >= 4,
        format!(
            "dot lower with DR3 in {lower}/5 pairs, srank not lower in {srank_ok}/5, {:.0}s [{}]",
            elapsed.as_secs_f64(),
            parts.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- 8

fn trajectories_match(base: &TrainConfig, variant: LossHead, data: &OfflineDataset, steps: usize) -> bool {
    let mut cfg = base.clone();
    let mut a = Trainer::new(cfg.clone(), data, None).unwrap();
    cfg.loss_head = variant;
    let mut b = Trainer::new(cfg, data, None).unwrap();
    for _ in 0..steps {
        a.step().unwrap();
        b.step().unwrap();
        if a.net().params() != b.net().params() {
            return false;
        }
    }
    true
}

fn reduction_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..10);
        let d = rng.random_range(1..8);
        let phi = uniform_matrix(n, d, -2.0, 2.0, &mut rng);
        let next = uniform_matrix(n, d, -2.0, 2.0, &mut rng);
        let plain = dr3_penalty(&phi, &next, false).unwrap();
        let general = dr3_generalized(&phi, &next, &Matrix::identity(d)).unwrap();
        worst = worst
            .max((plain.value - general.value).abs())
            .max(plain.d_phi.sub(&general.d_phi).unwrap().max_abs())
            .max(
                plain.d_phi_next.as_ref().unwrap().sub(general.d_phi_next.as_ref().unwrap()).unwrap().max_abs(),
            );
    }

    let cfg = ExperimentConfig::from_doc(&preset_doc("grid16-sparse-256").unwrap()).unwrap();
    let (data, _) = generate_dataset(&cfg, 3).unwrap();
    let base = TrainConfig {
        selector: BackupSelector::MaxAction,
        gamma: cfg.gamma,
        optimizer: OptimizerKind::Adam,
        lr: 1e-3,
        hidden: vec![16, 16],
        head_mode: HeadMode::StateActionInputScalar,
        target_period: 7,
        seed: 11,
        ..TrainConfig::default()
    };
    let rem = trajectories_match(
        &base,
        LossHead::Rem {
            heads: 1,
            loss: ErrorLoss::Squared,
        },
        &data,
        200,
    );
    let cql = trajectories_match(&base, LossHead::Cql { alpha: 0.0 }, &data, 200);
    outcome(
        worst <= 1e-10 && rem && cql,
        format!("identity-sigma gap {worst:.1e}, REM K=1 identical: {rem}, CQL alpha=0 identical: {cql}"),
    )
}

// ---------------------------------------------------------------- 9

fn statistics() -> Outcome {
    let v: Vec<f64> = (1..=8).map(f64::from).collect();
    let center = iqm(&v).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut asymmetric = 0;
    for _ in 0..100 {
        let tasks = rng.random_range(1..4);
        let gen = |rng: &mut ChaCha8Rng| {
            RunScores::from_tasks((0..tasks).map(|t| {
                let runs = rng.random_range(1..6);
                // coarse values so that ties occur
                (format!("t{t}"), (0..runs).map(|_| f64::from(rng.random_range(0..4))).collect())
            }))
            .unwrap()
        };
        let x = gen(&mut rng);
        let y = gen(&mut rng);
        if prob_improvement(&x, &y).unwrap() + prob_improvement(&y, &x).unwrap() != 1.0 {
            asymmetric += 1;
        }
    }
    let x = RunScores::from_tasks([("a", vec![5.0, 6.0]), ("b", vec![10.0])]).unwrap();
    let y = RunScores::from_tasks([("a", vec![1.0, 2.0, 4.0]), ("b", vec![3.0])]).unwrap();
    let dominant = prob_improvement(&x, &y).unwrap();
    outcome(
        center == 4.5 && asymmetric == 0 && dominant == 1.0,
        format!("iqm(1..8) = {center}, {asymmetric} asymmetric pairs, dominant case {dominant}"),
    )
}

// ---------------------------------------------------------------- 10

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    walkdir::WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let name = e.path().strip_prefix(dir).unwrap().display().to_string();
            (name, fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism_and_round_trip() -> Outcome {
    let mut doc = preset_doc("sarsa-vs-td").unwrap();
    doc.set("train.total_steps", "600");
    doc.set("train.eval_every", "200");
    doc.set("train.hidden", "8");
    let cfg = ExperimentConfig::from_doc(&doc).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let runs = run_all(&plan(&cfg).unwrap(), 2).unwrap();
        write_outputs(d.path(), &cfg, &runs).unwrap();
    }
    let a = read_tree(dirs[0].path());
    let b = read_tree(dirs[1].path());
    let identical = a == b && a.iter().filter(|(n, _)| n.ends_with(".csv")).count() == 12;

    let mut round_trips = true;
    for seed in 0..5 {
        let (data, _) = generate_dataset(&cfg, seed).unwrap();
        let path = dirs[0].path().join(format!("rt{seed}.dataset"));
        data.write(&path).unwrap();
        let back = OfflineDataset::read(&path).unwrap();
        round_trips &= back == data && back.to_text() == data.to_text();
    }
    outcome(
        identical && round_trips,
        format!(
            "{} output files byte-identical across repeats: {identical}, dataset round-trip exact: {round_trips}",
            a.len()
        ),
    )
}

fn main() {
    let instances = random_instances();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("gradient correctness", Box::new(gradient_correctness)),
        ("Lyapunov closed form", Box::new(lyapunov_closed_form)),
        ("implication suite", Box::new(|| implication_suite(&instances))),
        ("spectral vs simulation", Box::new(|| spectral_vs_simulation(&instances))),
        ("srank exactness", Box::new(srank_exactness)),
        ("co-adaptation reproduction", Box::new(coadaptation_reproduction)),
        ("DR3 effect", Box::new(dr3_effect)),
        ("reduction identities", Box::new(reduction_identities)),
        ("statistics", Box::new(statistics)),
        ("determinism and round-trip", Box::new(determinism_and_round_trip)),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|k| k != id) {
            continue;
        }
        let result = check();
        println!("{} [{id:>2}] {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
