//! Aggregates metric traces into summary and comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use coadapt_core::analysis::MetricTrace;
use coadapt_core::stats::{iqm, percentile_bootstrap_ci, prob_improvement, RunScores};
use coadapt_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const METRICS: &[&str] = &["final_return", "avg_return", "final_feat_dot", "final_srank", "final_loss"];

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const CONFIDENCE_LEVEL: f64 = 0.95;
const BOOTSTRAP_SEED: u64 = 0;

/// A trace together with the labels it is grouped under.
#[derive(Clone, Debug)]
pub struct LabelledTrace {
    pub task: String,
    pub algorithm: String,
    pub trace: MetricTrace,
}

/// Reads a trace. `algorithm` overrides the label recorded in the file.
pub fn load_trace(path: &Path, algorithm: Option<&str>) -> Result<LabelledTrace> {
    let trace = MetricTrace::read(path).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })?;
    let fallback = path
        .parent()
        .and_then(Path::file_name)
        .map_or_else(|| "unknown".to_string(), |s| s.to_string_lossy().into_owned());
    let algorithm = match algorithm {
        Some(a) => a.to_string(),
        None => trace.provenance_value("algorithm").map_or(fallback, str::to_string),
    };
    let task = trace.provenance_value("task").unwrap_or("default").to_string();
    Ok(LabelledTrace { task, algorithm, trace })
}

/// Expands `[label=]path` arguments; directories contribute every `*.csv` below them.
pub fn collect_inputs(args: &[String]) -> Result<Vec<(Option<String>, PathBuf)>> {
    let mut out = Vec::new();
    for arg in args {
        let (label, path) = match arg.split_once('=') {
            Some((l, p)) if !Path::new(arg).exists() => (Some(l.to_string()), PathBuf::from(p)),
            _ => (None, PathBuf::from(arg)),
        };
        if path.is_dir() {
            let mut found = Vec::new();
            for entry in walkdir::WalkDir::new(&path).sort_by_file_name() {
                let entry = entry.map_err(|e| {
                    let at = e.path().unwrap_or(&path).to_path_buf();
                    Error::io(at, e.into())
                })?;
                if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "csv") {
                    found.push(entry.into_path());
                }
            }
            out.extend(found.into_iter().map(|p| (label.clone(), p)));
        } else {
            out.push((label, path));
        }
    }
    if out.is_empty() {
        return Err(Error::config("no trace files given"));
    }
    Ok(out)
}

/// Score of one trace under a metric; NaN when undefined.
pub fn metric_value(trace: &MetricTrace, metric: &str) -> Result<f64> {
    if !METRICS.contains(&metric) {
        return Err(Error::config(format!("unknown metric '{metric}'")));
    }
    let records = trace.records();
    let Some(last) = records.last() else {
        return Ok(f64::NAN);
    };
    Ok(match metric {
        "final_return" => last.eval_return,
        "avg_return" => {
            let finite: Vec<f64> = records.iter().map(|c| c.eval_return).filter(|v| v.is_finite()).collect();
            if finite.is_empty() {
                f64::NAN
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            }
        }
        "final_feat_dot" => last.feat_dot,
        "final_srank" if last.diverged => f64::NAN,
        "final_srank" => last.srank as f64,
        _ => last.loss,
    })
}

/// algorithm → per-task scores, skipping undefined values.
fn scores_by_algorithm(traces: &[LabelledTrace], metric: &str) -> Result<BTreeMap<String, BTreeMap<String, Vec<f64>>>> {
    let mut out: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for t in traces {
        let v = metric_value(&t.trace, metric)?;
        let entry = out.entry(t.algorithm.clone()).or_default().entry(t.task.clone()).or_default();
        if v.is_finite() {
            entry.push(v);
        }
    }
    Ok(out)
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "nan".to_string()
    }
}

/// `task,algorithm,metric,runs,mean,iqm,ci_lo,ci_hi`.
pub fn summary_csv(traces: &[LabelledTrace]) -> Result<String> {
    let mut out = format!(
        "# bootstrap=percentile resamples={BOOTSTRAP_RESAMPLES} level={CONFIDENCE_LEVEL} seed={BOOTSTRAP_SEED} stratified=false\n"
    );
    out.push_str("task,algorithm,metric,runs,mean,iqm,ci_lo,ci_hi\n");
    let mut rows = BTreeMap::new();
    for metric in METRICS {
        for (alg, tasks) in scores_by_algorithm(traces, metric)? {
            for (task, values) in tasks {
                rows.insert((task, alg.clone(), metric.to_string()), values);
            }
        }
    }
    for ((task, alg, metric), values) in rows {
        let (mean, center, lo, hi) = if values.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
            let (lo, hi) = percentile_bootstrap_ci(&values, BOOTSTRAP_RESAMPLES, CONFIDENCE_LEVEL, &mut rng)?;
            (values.iter().sum::<f64>() / values.len() as f64, iqm(&values)?, lo, hi)
        };
        writeln!(
            out,
            "{task},{alg},{metric},{},{},{},{},{}",
            values.len(),
            fmt_value(mean),
            fmt_value(center),
            fmt_value(lo),
            fmt_value(hi)
        )
        .expect("writing to a String");
    }
    Ok(out)
}

/// `alg_a,alg_b,p_improve` for every ordered pair of algorithms.
pub fn comparison_csv(traces: &[LabelledTrace], metric: &str) -> Result<String> {
    let mut out = format!("# metric={metric}\nalg_a,alg_b,p_improve\n");
    let by_alg = scores_by_algorithm(traces, metric)?;
    let mut scores = BTreeMap::new();
    for (alg, tasks) in &by_alg {
        let usable: Vec<(String, Vec<f64>)> = tasks
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if usable.len() < tasks.len() {
            log::warn!("{alg}: some tasks have no finite {metric} values");
        }
        scores.insert(alg.clone(), (usable.len() == tasks.len()).then(|| RunScores::from_tasks(usable)).transpose()?);
    }
    for (a, sa) in &scores {
        for (b, sb) in &scores {
            if a == b {
                continue;
            }
            let p = match (sa, sb) {
                (Some(x), Some(y)) => prob_improvement(x, y)?,
                _ => f64::NAN,
            };
            writeln!(out, "{a},{b},{}", fmt_value(p)).expect("writing to a String");
        }
    }
    Ok(out)
}
