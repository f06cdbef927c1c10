//! Dataset generation and training runs over variants and seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use coadapt_core::agents::{BackupSelector, EvalSetup, QNetwork, Trainer};
use coadapt_core::analysis::MetricTrace;
use coadapt_core::envdata::{
    collect_dataset, layout_string, make_behavior_policy, value_iteration, OfflineDataset, StochasticPolicy,
};
use coadapt_core::{Error, Result};

use crate::config::ExperimentConfig;

const VALUE_ITERATION_TOL: f64 = 1e-10;

/// One training job.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub label: String,
    pub seed: u64,
    pub cfg: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub label: String,
    pub seed: u64,
    pub trace: MetricTrace,
    pub net: QNetwork,
    pub dataset: OfflineDataset,
}

/// Every `(variant, seed)` pair, variants outermost.
pub fn plan(cfg: &ExperimentConfig) -> Result<Vec<RunSpec>> {
    let mut specs = Vec::new();
    for (label, variant) in cfg.variants()? {
        for &seed in &cfg.seeds {
            specs.push(RunSpec {
                label: label.clone(),
                seed,
                cfg: variant.clone(),
            });
        }
    }
    Ok(specs)
}

/// The behavior policy a dataset was logged with, rebuilt from its metadata.
pub fn behavior_from_meta(dataset: &OfflineDataset) -> Result<StochasticPolicy> {
    let meta = dataset.meta();
    let p_opt: f64 = meta
        .policy
        .strip_prefix("eps-optimal(p_opt=")
        .and_then(|s| s.strip_suffix(')'))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::config(format!("cannot rebuild behavior policy '{}'", meta.policy)))?;
    let grid = meta.grid()?;
    let q = value_iteration(&grid, meta.gamma, VALUE_ITERATION_TOL)?;
    make_behavior_policy(&q, p_opt)
}

/// Collects the configured dataset with the given seed.
pub fn generate_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<(OfflineDataset, StochasticPolicy)> {
    let grid = cfg.grid_spec()?;
    let q = value_iteration(&grid, cfg.gamma, VALUE_ITERATION_TOL)?;
    let policy = make_behavior_policy(&q, cfg.data.p_opt)?;
    let data = collect_dataset(
        &grid,
        &cfg.observation_map()?,
        &policy,
        cfg.data.transitions,
        cfg.data.max_episode_len,
        seed,
    )?;
    Ok((data, policy))
}

/// Checks that a dataset read from disk describes the configured environment.
pub fn check_dataset(cfg: &ExperimentConfig, data: &OfflineDataset) -> Result<()> {
    let meta = data.meta();
    let grid = cfg.grid_spec()?;
    let mismatch = |what: &str, file: String, config: String| {
        Err(Error::config(format!("dataset {what} is {file} but the config has {config}")))
    };
    if meta.gamma != cfg.gamma {
        return mismatch("gamma", meta.gamma.to_string(), cfg.gamma.to_string());
    }
    if meta.layout != layout_string(&grid) {
        return mismatch("layout", meta.layout.clone(), layout_string(&grid));
    }
    let obs = cfg.observation_map()?;
    if (meta.obs_kind, meta.obs_dim, meta.obs_seed, meta.obs_radius)
        != (obs.kind(), obs.dim(), obs.seed(), obs.radius())
    {
        return mismatch(
            "observation map",
            format!("{} dim {} seed {} radius {}", meta.obs_kind.name(), meta.obs_dim, meta.obs_seed, meta.obs_radius),
            format!("{} dim {} seed {} radius {}", obs.kind().name(), obs.dim(), obs.seed(), obs.radius()),
        );
    }
    Ok(())
}

/// The dataset and behavior policy for one run.
pub fn dataset_for(cfg: &ExperimentConfig, seed: u64) -> Result<(OfflineDataset, Option<StochasticPolicy>)> {
    match &cfg.data.file {
        None => {
            let (data, policy) = generate_dataset(cfg, seed)?;
            Ok((data, Some(policy)))
        }
        Some(path) => {
            let data = OfflineDataset::read(path)?;
            check_dataset(cfg, &data)?;
            let policy = match behavior_from_meta(&data) {
                Ok(p) => Some(p),
                Err(_) if cfg.train.selector != BackupSelector::ExpectedBehavior => None,
                Err(e) => return Err(e),
            };
            Ok((data, policy))
        }
    }
}

fn provenance(spec: &RunSpec) -> Vec<(String, String)> {
    let mut prov = vec![
        ("task".to_string(), spec.cfg.name.clone()),
        ("algorithm".to_string(), spec.label.clone()),
    ];
    let mut train = spec.cfg.train.clone();
    train.seed = spec.seed;
    prov.extend(train.provenance());
    prov.extend(
        spec.cfg
            .provenance()
            .into_iter()
            .map(|(k, v)| (format!("config.{k}"), v)),
    );
    prov
}

pub fn run_one(spec: &RunSpec) -> Result<RunOutput> {
    let (dataset, policy) = dataset_for(&spec.cfg, spec.seed)?;
    let mut train = spec.cfg.train.clone();
    train.seed = spec.seed;
    let eval = EvalSetup::from_dataset(&dataset)?;
    let mut trainer = Trainer::new(train, &dataset, policy.as_ref())?.with_evaluation(eval);
    if let Some(noise) = spec.cfg.noise {
        trainer = trainer.with_noise(noise)?;
    }
    log::info!("training {} seed {}", spec.label, spec.seed);
    let (trace, net) = trainer.run(provenance(spec))?;
    if let Some(last) = trace.last() {
        log::info!(
            "{} seed {}: step {} loss {:.4e} feat_dot {:.4} srank {}{}",
            spec.label,
            spec.seed,
            last.step,
            last.loss,
            last.feat_dot,
            last.srank,
            if last.diverged { " (diverged)" } else { "" }
        );
    }
    Ok(RunOutput {
        label: spec.label.clone(),
        seed: spec.seed,
        trace,
        net,
        dataset,
    })
}

/// Runs every spec on up to `jobs` threads; results keep the order of `specs`.
pub fn run_all(specs: &[RunSpec], jobs: usize) -> Result<Vec<RunOutput>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunOutput>>>> = specs.iter().map(|_| Mutex::new(None)).collect();
    let workers = jobs.clamp(1, specs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= specs.len() {
                    break;
                }
                let result = run_one(&specs[i]);
                *slots[i].lock().expect("result slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot poisoned").expect("every job ran"))
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// File-system safe form of a variant label.
pub fn dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `<out>/<variant>/seed<s>.{csv,params,dataset}` and `<out>/config.txt`.
/// Returns the trace paths.
pub fn write_outputs(out: &Path, cfg: &ExperimentConfig, runs: &[RunOutput]) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    write_text(&out.join("config.txt"), &cfg.doc().to_text())?;
    let mut paths = Vec::new();
    for run in runs {
        let dir = out.join(dir_name(&run.label));
        create_dir(&dir)?;
        let stem = format!("seed{}", run.seed);
        let trace_path = dir.join(format!("{stem}.csv"));
        run.trace.write(&trace_path)?;
        run.net.write(&dir.join(format!("{stem}.params")))?;
        run.dataset.write(&dir.join(format!("{stem}.dataset")))?;
        paths.push(trace_path);
    }
    Ok(paths)
}

/// Fails when every run diverged.
pub fn check_divergence(runs: &[RunOutput]) -> Result<()> {
    if !runs.is_empty() && runs.iter().all(|r| r.trace.diverged()) {
        return Err(Error::numeric(format!("all {} runs diverged", runs.len())));
    }
    Ok(())
}

/// Writes one dataset per seed as `<out>/<name>-seed<s>.dataset`.
pub fn write_datasets(out: &Path, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    write_text(&out.join("config.txt"), &cfg.doc().to_text())?;
    let mut paths = Vec::new();
    for &seed in &cfg.seeds {
        let (data, _) = generate_dataset(cfg, seed)?;
        let path = out.join(format!("{}-seed{seed}.dataset", dir_name(&cfg.name)));
        data.write(&path)?;
        log::info!("wrote {} transitions to {}", data.len(), path.display());
        paths.push(path);
    }
    Ok(paths)
}
