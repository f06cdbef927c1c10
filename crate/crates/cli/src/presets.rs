//! Experiment presets shipped in the binary.

use coadapt_core::{Error, Result};

use crate::config::KvDoc;

const BASE: &str = "\
name = base
seeds = 0
env.grid = grid16-sparse
env.gamma = 0.9
obs.kind = smoothed-random-projection
obs.dim = 64
obs.seed = 0
obs.radius = 1
data.transitions = 256
data.p_opt = 0.7
data.max_episode_len = 50
train.selector = expected
train.loss = td
train.cql_alpha = 1.0
train.rem_heads = 4
train.rem_loss = huber
train.huber_delta = 1.0
train.dr3 = off
train.dr3_coef = 0
train.dr3_lyapunov_iters = 20
train.dr3_lyapunov_lr = 0.01
train.optimizer = sgd
train.lr = 0.05
train.batch_size = 32
train.target_period = 100
train.total_steps = 100000
train.eval_every = 25000
train.eval_episodes = 1
train.eval_max_len = 100
train.head_mode = state-action
train.hidden = 32, 32
train.srank_delta = 0.01
train.noise = off
train.noise_scale = 0.1
";

/// `(name, description, overrides on top of the base document)`.
const PRESETS: &[(&str, &str, &str)] = &[
    ("base", "single ExpectedBehavior run on grid16-sparse", ""),
    (
        "smoke",
        "tiny run for checking an installation",
        "\
name = smoke
data.transitions = 64
train.hidden = 8
train.total_steps = 200
train.eval_every = 100
",
    ),
    (
        "grid16-sparse-256",
        "256-transition dataset from a p_opt = 0.7 behavior policy",
        "name = grid16-sparse-256\n",
    ),
    (
        "sarsa-vs-td",
        "MC, SARSA, ExpectedBehavior and MaxAction backups over 3 seeds",
        "\
name = sarsa-vs-td
seeds = 0, 1, 2
sweep.key = train.selector
sweep.values = mc, sarsa, expected, max
",
    ),
    (
        "coadaptation",
        "MC, SARSA and ExpectedBehavior backups over 5 seeds",
        "\
name = coadaptation
seeds = 0, 1, 2, 3, 4
sweep.key = train.selector
sweep.values = mc, sarsa, expected
",
    ),
    (
        "target-sweep",
        "MaxAction backup across target update periods",
        "\
name = target-sweep
seeds = 0, 1, 2
train.selector = max
sweep.key = train.target_period
sweep.values = 5, 10, 50, 100, 200, 500
",
    ),
    (
        "dr3-effect",
        "MaxAction backup with and without the DR3 penalty",
        "\
name = dr3-effect
seeds = 0, 1, 2, 3, 4
train.selector = max
train.dr3 = dot
sweep.key = train.dr3_coef
sweep.values = 0, 0.01
",
    ),
    (
        "label-noise",
        "ExpectedBehavior TD with Gaussian label noise",
        "\
name = label-noise
seeds = 0, 1, 2, 3, 4
train.noise = label
train.noise_scale = 0.1
train.total_steps = 50000
train.eval_every = 1000
",
    ),
];

pub fn preset_names() -> impl Iterator<Item = (&'static str, &'static str)> {
    PRESETS.iter().map(|(n, d, _)| (*n, *d))
}

/// Full document for a preset.
pub fn preset_doc(name: &str) -> Result<KvDoc> {
    let (_, _, overrides) = PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| Error::config(format!("unknown preset '{name}'")))?;
    let mut doc = KvDoc::parse(BASE)?;
    doc.merge(&KvDoc::parse(overrides)?);
    Ok(doc)
}

/// A user document layered over the base, so it may list only what it changes.
pub fn with_base(user: &KvDoc) -> Result<KvDoc> {
    let mut doc = KvDoc::parse(BASE)?;
    doc.merge(user);
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn every_preset_is_a_valid_config() {
        for (name, _) in preset_names() {
            let cfg = ExperimentConfig::from_doc(&preset_doc(name).unwrap()).unwrap();
            assert_eq!(cfg.name, name);
            assert!(!cfg.variants().unwrap().is_empty());
        }
    }

    #[test]
    fn sweep_sizes() {
        let count = |n: &str| {
            let cfg = ExperimentConfig::from_doc(&preset_doc(n).unwrap()).unwrap();
            (cfg.variants().unwrap().len(), cfg.seeds.len())
        };
        assert_eq!(count("sarsa-vs-td"), (4, 3));
        assert_eq!(count("target-sweep"), (6, 3));
        assert_eq!(count("dr3-effect"), (2, 5));
    }

    #[test]
    fn unknown_preset_is_a_config_error() {
        assert!(matches!(preset_doc("nope"), Err(Error::Config(_))));
    }
}
