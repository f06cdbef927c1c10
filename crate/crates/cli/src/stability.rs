//! Spectral stability reports for feature pairs.

use std::fmt::Write as _;
use std::path::Path;

use coadapt_core::agents::{BackupSelector, ErrorLoss, LossHead, QNetwork, TrainConfig, Trainer};
use coadapt_core::analysis::{simulate_linear_td, stability_spectrum, FeaturePair, StabilityReport, DEFAULT_STABILITY_TOL};
use coadapt_core::envdata::OfflineDataset;
use coadapt_core::numerics::Matrix;
use coadapt_core::{Error, Result};

use crate::experiment::behavior_from_meta;

/// A feature pair with per-row rewards (zero when the file has none).
#[derive(Clone, Debug)]
pub struct FeatureInput {
    pub pair: FeaturePair,
    pub rewards: Vec<f64>,
}

/// Parses `phi_*`/`next_*` columns with an optional `reward` column and a
/// `# gamma=` line. `gamma` overrides the file.
pub fn parse_features(text: &str, gamma: Option<f64>) -> Result<FeatureInput> {
    let mut file_gamma = None;
    let mut header: Option<Vec<String>> = None;
    let mut phi = Vec::new();
    let mut next = Vec::new();
    let mut rewards = Vec::new();
    let mut columns = (Vec::new(), Vec::new(), None);
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(meta) = line.strip_prefix('#') {
            if let Some(v) = meta.trim().strip_prefix("gamma=") {
                file_gamma = Some(
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::parse(lineno, format!("gamma '{v}' is not a number")))?,
                );
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(cols) = &header else {
            let cols: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
            let phi_cols: Vec<usize> = (0..cols.len()).filter(|&k| cols[k].starts_with("phi_")).collect();
            let next_cols: Vec<usize> = (0..cols.len()).filter(|&k| cols[k].starts_with("next_")).collect();
            if phi_cols.is_empty() || phi_cols.len() != next_cols.len() {
                return Err(Error::parse(lineno, "header needs matching phi_* and next_* columns"));
            }
            let reward = cols.iter().position(|c| c == "reward");
            columns = (phi_cols, next_cols, reward);
            header = Some(cols);
            continue;
        };
        if fields.len() != cols.len() {
            return Err(Error::parse(lineno, format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        let values = fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::parse(lineno, format!("'{f}' is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(lineno, "non-finite feature value"));
        }
        phi.push(columns.0.iter().map(|&k| values[k]).collect::<Vec<f64>>());
        next.push(columns.1.iter().map(|&k| values[k]).collect::<Vec<f64>>());
        rewards.push(columns.2.map_or(0.0, |k| values[k]));
    }
    if header.is_none() {
        return Err(Error::parse(text.lines().count().max(1), "feature file has no header"));
    }
    if phi.is_empty() {
        return Err(Error::domain("feature file has no rows"));
    }
    let gamma = gamma
        .or(file_gamma)
        .ok_or_else(|| Error::config("no discount given: pass --gamma or add a '# gamma=' line"))?;
    let pair = FeaturePair::new(Matrix::from_rows(&phi)?, Matrix::from_rows(&next)?, gamma)?;
    Ok(FeatureInput { pair, rewards })
}

pub fn features_csv(input: &FeatureInput) -> String {
    let pair = &input.pair;
    let d = pair.dim();
    let mut out = format!("# gamma={}\n", pair.gamma());
    let names: Vec<String> = (0..d)
        .map(|k| format!("phi_{k}"))
        .chain((0..d).map(|k| format!("next_{k}")))
        .chain(std::iter::once("reward".to_string()))
        .collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for i in 0..pair.len() {
        let row: Vec<String> = pair
            .phi()
            .row(i)
            .iter()
            .chain(pair.phi_next().row(i))
            .chain(std::iter::once(&input.rewards[i]))
            .map(f64::to_string)
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Features of a trained network over a dataset, with `φ'` chosen by `selector`.
pub fn features_from_network(dataset: &OfflineDataset, net: QNetwork, selector: BackupSelector) -> Result<FeatureInput> {
    let behavior = match behavior_from_meta(dataset) {
        Ok(p) => Some(p),
        Err(_) if selector != BackupSelector::ExpectedBehavior => None,
        Err(e) => return Err(e),
    };
    let loss_head = if net.heads() > 1 {
        LossHead::Rem {
            heads: net.heads(),
            loss: ErrorLoss::Squared,
        }
    } else {
        LossHead::PlainTD
    };
    let cfg = TrainConfig {
        selector,
        loss_head,
        gamma: dataset.gamma(),
        head_mode: net.head_mode(),
        hidden: vec![net.feature_dim()],
        ..TrainConfig::default()
    };
    let trainer = Trainer::with_network(cfg, dataset, behavior.as_ref(), net)?;
    let pair = trainer.feature_pair()?;
    let rewards = dataset.transitions().iter().map(|t| t.reward).collect();
    Ok(FeatureInput { pair, rewards })
}

pub fn load_network_features(dataset: &Path, params: &Path, selector: BackupSelector) -> Result<FeatureInput> {
    let data = OfflineDataset::read(dataset)?;
    let net = QNetwork::read(params)?;
    features_from_network(&data, net, selector)
}

pub struct SimulationSettings {
    pub eta: f64,
    pub steps: usize,
}

/// Human-readable report; degenerate inputs are described rather than rejected.
pub fn report(input: &FeatureInput, simulate: Option<&SimulationSettings>) -> Result<String> {
    let pair = &input.pair;
    let mut out = String::new();
    writeln!(out, "transitions: {}  feature dim: {}  gamma: {}", pair.len(), pair.dim(), pair.gamma())
        .expect("writing to a String");
    if pair.total_sq_norm() == 0.0 {
        writeln!(out, "degenerate: every feature row is zero; the TD matrix vanishes").expect("writing to a String");
    }
    let rep: StabilityReport = stability_spectrum(pair, DEFAULT_STABILITY_TOL)?;
    writeln!(out, "eigenvalues:").expect("writing to a String");
    for z in &rep.eigenvalues {
        writeln!(out, "  {:+.6e} {:+.6e}i", z.re, z.im).expect("writing to a String");
    }
    writeln!(out, "min real part: {:.6e}  tolerance: {:.3e}", rep.min_real_part, rep.tol).expect("writing to a String");
    writeln!(out, "verdict: {}", rep.verdict).expect("writing to a String");
    writeln!(out, "trace condition: {}", if rep.trace_condition_holds { "holds" } else { "does not hold" })
        .expect("writing to a String");
    if let Some(sim) = simulate {
        let run = simulate_linear_td(pair, &input.rewards, sim.eta, sim.steps)?;
        let outcome = if run.diverged {
            "diverged"
        } else if run.converged {
            "converged"
        } else {
            "inconclusive"
        };
        writeln!(
            out,
            "simulation: {outcome} after {} steps at eta {} (final error {:.6e}, fixed point {})",
            sim.steps,
            sim.eta,
            run.final_error(),
            if run.fixed_point.is_some() { "exists" } else { "absent" }
        )
        .expect("writing to a String");
    }
    Ok(out)
}
