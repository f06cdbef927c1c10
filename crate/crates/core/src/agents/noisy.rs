//! Noisy semi-gradient TD runs and the full-gradient implicit regularizer.

use super::network::{QNetwork, Which};
use super::train::{EvalSetup, LossHead, NoiseKind, TrainConfig, Trainer};
use crate::analysis::MetricTrace;
use crate::envdata::{OfflineDataset, StochasticPolicy};
use crate::error::{Error, Result};
use crate::numerics::{dot, Gradients};

/// Plain TD training with parameter or label noise, recording a trace
/// (including the implicit regularizer value) at every checkpoint.
pub fn noisy_td_run(
    net: QNetwork,
    dataset: &OfflineDataset,
    noise: NoiseKind,
    config: &TrainConfig,
    behavior: Option<&StochasticPolicy>,
    eval: Option<EvalSetup>,
) -> Result<MetricTrace> {
    if config.loss_head != LossHead::PlainTD {
        return Err(Error::config("noisy TD runs use the plain TD loss"));
    }
    let mut trainer = Trainer::with_network(config.clone(), dataset, behavior, net)?.with_noise(noise)?;
    if let Some(e) = eval {
        trainer = trainer.with_evaluation(e);
    }
    let mut provenance = config.provenance();
    provenance.push((
        "noise".into(),
        match noise {
            NoiseKind::Isotropic { scale } => format!("isotropic({scale})"),
            NoiseKind::LabelNoiseTargets { scale } => format!("label({scale})"),
        },
    ));
    Ok(trainer.run(provenance)?.0)
}

fn param_gradient(net: &QNetwork, obs: &[f64], action: usize) -> Result<Vec<f64>> {
    let params = net.params();
    let tape = net.tape(Which::Online, obs, action)?;
    let mut dq = vec![0.0; params.output_dim()];
    for k in 0..net.heads() {
        dq[net.output_index(k, action)] = 1.0 / net.heads() as f64;
    }
    let mut g = Gradients::zeros_like(params);
    params.backward_into(&tape, &dq, None, &mut g)?;
    Ok(g.flatten())
}

/// `Σ‖∇_θ Q(sᵢ,aᵢ)‖² − γ Σ ⟨∇_θ Q(sᵢ,aᵢ), ∇_θ Q(s'ᵢ,a'ᵢ)⟩` over all parameters,
/// with `a'` the logged next action and terminal transitions contributing no
/// second term. Meant for small networks.
pub fn implicit_reg_full_gradient(net: &QNetwork, dataset: &OfflineDataset, batch: &[usize], gamma: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("implicit regularizer of an empty batch"));
    }
    let mut total = 0.0;
    for &i in batch {
        let t = dataset
            .transitions()
            .get(i)
            .ok_or_else(|| Error::shape(format!("batch index {i} outside the dataset")))?;
        let g = param_gradient(net, &t.obs, t.action)?;
        total += dot(&g, &g);
        if !t.terminal {
            let gn = param_gradient(net, &t.next_obs, t.next_action)?;
            total -= gamma * dot(&g, &gn);
        }
    }
    Ok(total)
}
