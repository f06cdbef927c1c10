//! Offline TD training: backup targets, the combined objective with its
//! reverse pass, and the training loop that records a [`MetricTrace`].

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dr3::{dr3_generalized, dr3_penalty, label_noise_sigma, Dr3Config, Dr3Variant};
use super::losses::{cql_penalty, sample_simplex, ErrorLoss};
use super::network::{mix_heads, QNetwork, Which};
use crate::analysis::{
    implicit_reg_value, mean_cosine, mean_feature_dot, srank, Checkpoint, FeaturePair, MetricTrace,
};
use crate::envdata::{
    evaluate_policy, greedy_action, mc_returns, GridSpec, ObservationMap, OfflineDataset, StochasticPolicy,
    Transition, NUM_ACTIONS,
};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Gradients, HeadMode, Matrix, Optimizer, Tape};

/// Runs whose mean Q-value exceeds this magnitude are marked diverged.
pub const DIVERGENCE_CAP: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackupSelector {
    /// `a'` is the logged next action.
    SarsaDatasetAction,
    /// Expectation of the target values under the behavior policy.
    ExpectedBehavior,
    /// Greedy `a'` under the target network.
    MaxAction,
    /// Regression onto Monte-Carlo returns, no bootstrapping.
    MonteCarloRegression,
}

impl BackupSelector {
    pub fn name(self) -> &'static str {
        match self {
            BackupSelector::SarsaDatasetAction => "sarsa",
            BackupSelector::ExpectedBehavior => "expected",
            BackupSelector::MaxAction => "max",
            BackupSelector::MonteCarloRegression => "mc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sarsa" => Ok(BackupSelector::SarsaDatasetAction),
            "expected" => Ok(BackupSelector::ExpectedBehavior),
            "max" => Ok(BackupSelector::MaxAction),
            "mc" => Ok(BackupSelector::MonteCarloRegression),
            other => Err(Error::config(format!("unknown backup selector '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossHead {
    PlainTD,
    Cql { alpha: f64 },
    Rem { heads: usize, loss: ErrorLoss },
}

impl LossHead {
    pub fn heads(self) -> usize {
        match self {
            LossHead::Rem { heads, .. } => heads,
            _ => 1,
        }
    }

    pub fn error_loss(self) -> ErrorLoss {
        match self {
            LossHead::Rem { loss, .. } => loss,
            _ => ErrorLoss::Squared,
        }
    }

    pub fn describe(self) -> String {
        match self {
            LossHead::PlainTD => "td".into(),
            LossHead::Cql { alpha } => format!("cql(alpha={alpha})"),
            LossHead::Rem { heads, loss } => match loss {
                ErrorLoss::Squared => format!("rem(heads={heads},squared)"),
                ErrorLoss::Huber { delta } => format!("rem(heads={heads},huber={delta})"),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Every knob of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub selector: BackupSelector,
    pub loss_head: LossHead,
    pub dr3: Dr3Config,
    pub gamma: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub target_period: usize,
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_max_len: usize,
    pub seed: u64,
    pub head_mode: HeadMode,
    pub hidden: Vec<usize>,
    pub srank_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            selector: BackupSelector::ExpectedBehavior,
            loss_head: LossHead::PlainTD,
            dr3: Dr3Config::off(),
            gamma: 0.9,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            batch_size: 32,
            target_period: 100,
            total_steps: 10_000,
            eval_every: 1000,
            eval_episodes: 1,
            eval_max_len: 100,
            seed: 0,
            head_mode: HeadMode::StateInputMultiHead,
            hidden: vec![64, 64],
            srank_delta: crate::analysis::DEFAULT_SRANK_DELTA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dr3.validate()?;
        match self.loss_head {
            LossHead::Cql { alpha } if !(alpha >= 0.0) => {
                return Err(Error::config(format!("CQL alpha {alpha} must be non-negative")))
            }
            LossHead::Rem { heads: 0, .. } => return Err(Error::config("REM needs at least one head")),
            LossHead::Rem {
                loss: ErrorLoss::Huber { delta },
                ..
            } if !(delta > 0.0) => return Err(Error::config("Huber delta must be positive")),
            _ => {}
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("learning rate {} must be non-negative", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.target_period == 0 {
            return Err(Error::config("target period must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("checkpoint cadence must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("network needs at least one non-empty hidden layer"));
        }
        if !(self.srank_delta > 0.0 && self.srank_delta < 1.0) {
            return Err(Error::config("srank delta must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn optimizer(&self, params: &crate::numerics::MlpParams) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: self.lr },
            OptimizerKind::Adam => Optimizer::Adam {
                cfg: AdamConfig {
                    lr: self.lr,
                    ..AdamConfig::default()
                },
                state: AdamState::new(params),
            },
        }
    }

    /// `key=value` lines describing the run, for output provenance.
    pub fn provenance(&self) -> Vec<(String, String)> {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        vec![
            ("selector".into(), self.selector.name().into()),
            ("loss_head".into(), self.loss_head.describe()),
            ("dr3.variant".into(), self.dr3.variant.name().into()),
            ("dr3.coefficient".into(), self.dr3.coefficient.to_string()),
            ("dr3.lyapunov_iters".into(), self.dr3.lyapunov_iters.to_string()),
            ("dr3.lyapunov_lr".into(), self.dr3.lyapunov_lr.to_string()),
            ("gamma".into(), self.gamma.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("optimizer".into(), self.optimizer.name().into()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("target_period".into(), self.target_period.to_string()),
            ("total_steps".into(), self.total_steps.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("head_mode".into(), self.head_mode.name().into()),
            ("hidden".into(), hidden.join(";")),
            ("srank_delta".into(), self.srank_delta.to_string()),
        ]
    }
}

/// What a backup needs beyond the transition itself.
#[derive(Clone, Copy, Debug)]
pub struct BackupContext<'a> {
    pub selector: BackupSelector,
    pub gamma: f64,
    pub behavior: Option<&'a StochasticPolicy>,
    /// Monte-Carlo returns aligned with the dataset.
    pub returns: Option<&'a [f64]>,
}

impl BackupContext<'_> {
    fn check(&self) -> Result<()> {
        match self.selector {
            BackupSelector::ExpectedBehavior if self.behavior.is_none() => {
                Err(Error::config("expected backups need the behavior policy"))
            }
            BackupSelector::MonteCarloRegression if self.returns.is_none() => {
                Err(Error::config("Monte-Carlo regression needs dataset returns"))
            }
            _ => Ok(()),
        }
    }
}

/// Regression target for transition `idx` given target values at `s'`.
pub fn backup_target(t: &Transition, idx: usize, next_q: &[f64; NUM_ACTIONS], ctx: &BackupContext) -> Result<f64> {
    ctx.check()?;
    if t.terminal {
        return Ok(t.reward);
    }
    let bootstrap = match ctx.selector {
        BackupSelector::SarsaDatasetAction => next_q[t.next_action],
        BackupSelector::ExpectedBehavior => {
            let pi = ctx.behavior.expect("checked").row(t.next_state);
            pi.iter().zip(next_q).map(|(p, q)| p * q).sum()
        }
        BackupSelector::MaxAction => next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        BackupSelector::MonteCarloRegression => {
            let returns = ctx.returns.expect("checked");
            return returns
                .get(idx)
                .copied()
                .ok_or_else(|| Error::shape(format!("no return for transition {idx}")));
        }
    };
    Ok(t.reward + ctx.gamma * bootstrap)
}

/// Targets for `batch` (dataset indices) from the target network, heads averaged.
pub fn compute_targets(net: &QNetwork, dataset: &OfflineDataset, batch: &[usize], ctx: &BackupContext) -> Result<Vec<f64>> {
    ctx.check()?;
    let uniform = vec![1.0 / net.heads() as f64; net.heads()];
    batch
        .iter()
        .map(|&i| {
            let t = dataset
                .transitions()
                .get(i)
                .ok_or_else(|| Error::shape(format!("batch index {i} outside the dataset")))?;
            let next = mix_heads(&net.head_values(Which::Target, &t.next_obs)?, &uniform);
            backup_target(t, i, &next, ctx)
        })
        .collect()
}

/// Actions (with weights) at `s'` whose features enter the DR3 term.
/// Terminal transitions have none.
pub fn next_feature_actions(t: &Transition, next_q: &[f64; NUM_ACTIONS], ctx: &BackupContext) -> Vec<(usize, f64)> {
    if t.terminal {
        return Vec::new();
    }
    match ctx.selector {
        BackupSelector::SarsaDatasetAction | BackupSelector::MonteCarloRegression => vec![(t.next_action, 1.0)],
        BackupSelector::ExpectedBehavior => match ctx.behavior {
            Some(pi) => pi
                .row(t.next_state)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(a, &p)| (a, p))
                .collect(),
            None => vec![(t.next_action, 1.0)],
        },
        BackupSelector::MaxAction => vec![(greedy_action(next_q), 1.0)],
    }
}

/// Components of one step's objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    /// Batch-mean TD (or MC) error loss.
    pub td: f64,
    /// Batch-mean CQL penalty.
    pub cql: f64,
    /// Batch-mean DR3 penalty before the coefficient.
    pub dr3: f64,
    /// `td + cql + c₀·dr3`.
    pub total: f64,
}

/// Per-sample inputs of the objective.
#[derive(Clone, Debug)]
pub struct SampleSpec<'a> {
    pub transition: &'a Transition,
    pub target: f64,
    pub next_actions: Vec<(usize, f64)>,
}

struct SampleTapes {
    /// Tape at `(s, a)`; in multi-head mode the single state tape.
    data: Tape,
    /// State-action mode with CQL: tapes at `(s, b)` for every `b`.
    all_actions: Vec<Tape>,
    /// Tapes at `(s', a'_j)` with weights; one merged tape in multi-head mode.
    next: Vec<(Tape, f64)>,
}

/// Objective of one batch and, if `grads` is given, its gradient accumulated there.
///
/// Targets are constants. The DR3 term is `c₀ · (1/n) Σ φᵢᵀ S φ'ᵢ` with `S = I`
/// or the label-noise `Σ*_M`, where `φ'ᵢ = Σ_j w_j φ(s'ᵢ, a'_j)`.
pub fn batch_objective(
    net: &QNetwork,
    samples: &[SampleSpec],
    loss_head: LossHead,
    dr3: &Dr3Config,
    gamma: f64,
    head_weights: &[f64],
    mut grads: Option<&mut Gradients>,
) -> Result<LossComponents> {
    if samples.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    if head_weights.len() != net.heads() {
        return Err(Error::shape(format!("{} head weights for {} heads", head_weights.len(), net.heads())));
    }
    if matches!(loss_head, LossHead::Cql { .. }) && net.heads() != 1 {
        return Err(Error::config("CQL runs use a single head"));
    }
    let n = samples.len();
    let inv_n = 1.0 / n as f64;
    let params = net.params();
    let multi = net.head_mode() == HeadMode::StateInputMultiHead;
    let use_dr3 = dr3.variant != Dr3Variant::Off;
    let want_all_actions = !multi && matches!(loss_head, LossHead::Cql { .. });

    let mut tapes = Vec::with_capacity(n);
    for s in samples {
        let t = s.transition;
        let data = net.tape(Which::Online, &t.obs, t.action)?;
        let all_actions = if want_all_actions {
            (0..NUM_ACTIONS)
                .map(|b| net.tape(Which::Online, &t.obs, b))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mut next = Vec::new();
        if use_dr3 && !s.next_actions.is_empty() {
            if multi {
                let w: f64 = s.next_actions.iter().map(|(_, w)| w).sum();
                next.push((net.tape(Which::Online, &t.next_obs, 0)?, w));
            } else {
                for &(a, w) in &s.next_actions {
                    next.push((net.tape(Which::Online, &t.next_obs, a)?, w));
                }
            }
        }
        tapes.push(SampleTapes {
            data,
            all_actions,
            next,
        });
    }

    let d = net.feature_dim();
    let (dr3_value, d_phi, d_phi_next) = if use_dr3 {
        let mut phi = Matrix::zeros(n, d);
        let mut phi_next = Matrix::zeros(n, d);
        for (i, st) in tapes.iter().enumerate() {
            phi.row_mut(i).copy_from_slice(st.data.features());
            let row = phi_next.row_mut(i);
            for (tape, w) in &st.next {
                for (r, f) in row.iter_mut().zip(tape.features()) {
                    *r += w * f;
                }
            }
        }
        let v = match dr3.variant {
            Dr3Variant::LastLayerDot => dr3_penalty(&phi, &phi_next, false)?,
            Dr3Variant::LastLayerDotStopGrad => dr3_penalty(&phi, &phi_next, true)?,
            Dr3Variant::LabelNoiseGeneralized => {
                let pair = FeaturePair::new(phi.clone(), phi_next.clone(), gamma)?;
                let sigma = label_noise_sigma(&pair, dr3.lyapunov_lr, dr3.lyapunov_iters)?;
                dr3_generalized(&phi, &phi_next, &sigma)?
            }
            Dr3Variant::Off => unreachable!("checked above"),
        };
        (v.value * inv_n, Some(v.d_phi), v.d_phi_next)
    } else {
        (0.0, None, None)
    };

    let error_loss = loss_head.error_loss();
    let mut td = 0.0;
    let mut cql = 0.0;
    let c = dr3.coefficient * inv_n;
    for (i, (s, st)) in samples.iter().zip(&tapes).enumerate() {
        let t = s.transition;
        let out = st.data.q_values();
        let prediction: f64 = head_weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * out[net.output_index(k, t.action)])
            .sum();
        let (loss, dloss) = error_loss.eval(prediction - s.target);
        td += loss;

        let mut dq_data = vec![0.0; out.len()];
        for (k, w) in head_weights.iter().enumerate() {
            dq_data[net.output_index(k, t.action)] += dloss * w * inv_n;
        }
        let mut all_action_dq: Vec<Vec<f64>> = Vec::new();
        if let LossHead::Cql { alpha } = loss_head {
            let q_row: Vec<f64> = if multi {
                out[..NUM_ACTIONS].to_vec()
            } else {
                st.all_actions.iter().map(|tp| tp.q_values()[0]).collect()
            };
            let p = cql_penalty(&q_row, t.action, alpha)?;
            cql += p.value;
            if multi {
                for (b, g) in p.grad.iter().enumerate() {
                    dq_data[b] += g * inv_n;
                }
            } else {
                all_action_dq = p.grad.iter().map(|g| vec![g * inv_n]).collect();
            }
        }

        let Some(g) = grads.as_deref_mut() else { continue };
        let dfeat: Option<Vec<f64>> = d_phi.as_ref().map(|m| m.row(i).iter().map(|v| c * v).collect());
        params.backward_into(&st.data, &dq_data, dfeat.as_deref(), g)?;
        for (tape, dq) in st.all_actions.iter().zip(&all_action_dq) {
            params.backward_into(tape, dq, None, g)?;
        }
        if let Some(dn) = &d_phi_next {
            let zero = vec![0.0; params.output_dim()];
            for (tape, w) in &st.next {
                let df: Vec<f64> = dn.row(i).iter().map(|v| c * w * v).collect();
                params.backward_into(tape, &zero, Some(&df), g)?;
            }
        }
    }
    let td = td * inv_n;
    let cql = cql * inv_n;
    Ok(LossComponents {
        td,
        cql,
        dr3: dr3_value,
        total: td + cql + dr3.coefficient * dr3_value,
    })
}

/// Perturbation injected into training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    /// Gaussian noise of this standard deviation added to every parameter after each update.
    Isotropic { scale: f64 },
    /// Gaussian noise of this standard deviation added to each regression target.
    LabelNoiseTargets { scale: f64 },
}

/// Grid and observation map for return evaluation at checkpoints.
#[derive(Clone, Debug)]
pub struct EvalSetup {
    pub grid: GridSpec,
    pub obs_map: ObservationMap,
}

impl EvalSetup {
    /// Rebuilds the environment recorded in a dataset's metadata.
    pub fn from_dataset(dataset: &OfflineDataset) -> Result<Self> {
        Ok(EvalSetup {
            grid: dataset.meta().grid()?,
            obs_map: dataset.meta().observation_map()?,
        })
    }
}

// independent generator streams derived from the run seed
const STREAM_INIT: u64 = 0;
const STREAM_BATCH: u64 = 1;
const STREAM_REM: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_EVAL: u64 = 4;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One offline training run over a fixed dataset.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    dataset: &'a OfflineDataset,
    behavior: Option<StochasticPolicy>,
    returns: Vec<f64>,
    net: QNetwork,
    optimizer: Optimizer,
    /// Target-network head values at every `s'`, refreshed on each sync.
    next_values: Vec<Vec<f64>>,
    batch_rng: ChaCha8Rng,
    rem_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    noise: Option<NoiseKind>,
    eval: Option<EvalSetup>,
    steps_done: usize,
}

impl<'a> Trainer<'a> {
    /// Fresh network initialized from the run seed.
    pub fn new(cfg: TrainConfig, dataset: &'a OfflineDataset, behavior: Option<&StochasticPolicy>) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, STREAM_INIT);
        let net = QNetwork::new(
            dataset.obs_dim(),
            &cfg.hidden,
            cfg.head_mode,
            cfg.loss_head.heads(),
            &mut rng,
        )?;
        Trainer::with_network(cfg, dataset, behavior, net)
    }

    pub fn with_network(
        cfg: TrainConfig,
        dataset: &'a OfflineDataset,
        behavior: Option<&StochasticPolicy>,
        net: QNetwork,
    ) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::config("cannot train on an empty dataset"));
        }
        if net.obs_dim() != dataset.obs_dim() {
            return Err(Error::config(format!(
                "network expects {}-dimensional observations, dataset has {}",
                net.obs_dim(),
                dataset.obs_dim()
            )));
        }
        if net.heads() != cfg.loss_head.heads() {
            return Err(Error::config("network head count differs from the loss head"));
        }
        if cfg.selector == BackupSelector::ExpectedBehavior {
            match behavior {
                None => return Err(Error::config("expected backups need the behavior policy")),
                Some(pi) if dataset.transitions().iter().any(|t| t.next_state >= pi.num_states()) => {
                    return Err(Error::config("behavior policy does not cover the dataset's states"))
                }
                _ => {}
            }
        }
        let optimizer = cfg.optimizer(net.params());
        let returns = mc_returns(dataset);
        let mut trainer = Trainer {
            batch_rng: stream(cfg.seed, STREAM_BATCH),
            rem_rng: stream(cfg.seed, STREAM_REM),
            noise_rng: stream(cfg.seed, STREAM_NOISE),
            cfg,
            dataset,
            behavior: behavior.cloned(),
            returns,
            net,
            optimizer,
            next_values: Vec::new(),
            noise: None,
            eval: None,
            steps_done: 0,
        };
        trainer.refresh_target_cache()?;
        Ok(trainer)
    }

    pub fn with_noise(mut self, noise: NoiseKind) -> Result<Self> {
        let scale = match noise {
            NoiseKind::Isotropic { scale } | NoiseKind::LabelNoiseTargets { scale } => scale,
        };
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::config(format!("noise scale {scale} must be positive")));
        }
        self.noise = Some(noise);
        Ok(self)
    }

    pub fn with_evaluation(mut self, eval: EvalSetup) -> Self {
        self.eval = Some(eval);
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net(&self) -> &QNetwork {
        &self.net
    }

    pub fn into_net(self) -> QNetwork {
        self.net
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn backup_context(&self) -> BackupContext<'_> {
        BackupContext {
            selector: self.cfg.selector,
            gamma: self.cfg.gamma,
            behavior: self.behavior.as_ref(),
            returns: Some(&self.returns),
        }
    }

    fn refresh_target_cache(&mut self) -> Result<()> {
        self.next_values = self
            .dataset
            .transitions()
            .iter()
            .map(|t| self.net.head_values(Which::Target, &t.next_obs))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Uniform sampling with replacement.
    pub fn sample_batch(&mut self) -> Vec<usize> {
        let n = self.dataset.len();
        (0..self.cfg.batch_size).map(|_| self.batch_rng.random_range(0..n)).collect()
    }

    fn samples(&self, batch: &[usize], head_weights: &[f64], label_noise: &[f64]) -> Result<Vec<SampleSpec<'a>>> {
        let ctx = self.backup_context();
        batch
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let t = self
                    .dataset
                    .transitions()
                    .get(i)
                    .ok_or_else(|| Error::shape(format!("batch index {i} outside the dataset")))?;
                let next_q = mix_heads(&self.next_values[i], head_weights);
                let target = backup_target(t, i, &next_q, &ctx)? + label_noise.get(j).copied().unwrap_or(0.0);
                Ok(SampleSpec {
                    transition: t,
                    target,
                    next_actions: next_feature_actions(t, &next_q, &ctx),
                })
            })
            .collect()
    }

    /// One gradient step on `batch`, then a hard target sync every `N` steps.
    pub fn train_step(&mut self, batch: &[usize]) -> Result<LossComponents> {
        let heads = self.net.heads();
        let head_weights = if heads == 1 {
            vec![1.0]
        } else {
            sample_simplex(heads, &mut self.rem_rng)
        };
        let label_noise: Vec<f64> = match self.noise {
            Some(NoiseKind::LabelNoiseTargets { scale }) => batch
                .iter()
                .map(|_| scale * gaussian(&mut self.noise_rng))
                .collect(),
            _ => Vec::new(),
        };
        let samples = self.samples(batch, &head_weights, &label_noise)?;
        let mut grads = Gradients::zeros_like(self.net.params());
        let loss = batch_objective(
            &self.net,
            &samples,
            self.cfg.loss_head,
            &self.cfg.dr3,
            self.cfg.gamma,
            &head_weights,
            Some(&mut grads),
        )?;
        if !loss.total.is_finite() {
            return Err(Error::numeric(format!("non-finite loss at step {}", self.steps_done + 1)));
        }
        self.optimizer.apply(self.net.params_mut(), &grads)?;
        if let Some(NoiseKind::Isotropic { scale }) = self.noise {
            for p in self.net.params_mut().slices_mut() {
                for v in p.iter_mut() {
                    *v += scale * gaussian(&mut self.noise_rng);
                }
            }
        }
        if !self.net.params().is_finite() {
            return Err(Error::numeric(format!("non-finite parameters at step {}", self.steps_done + 1)));
        }
        self.steps_done += 1;
        if self.steps_done % self.cfg.target_period == 0 {
            self.net.sync_target();
            self.refresh_target_cache()?;
        }
        Ok(loss)
    }

    /// Samples a batch and trains on it.
    pub fn step(&mut self) -> Result<LossComponents> {
        let batch = self.sample_batch();
        self.train_step(&batch)
    }

    /// Features over the whole dataset with `φ'` aligned to the backup.
    pub fn feature_pair(&self) -> Result<FeaturePair> {
        let ctx = self.backup_context();
        let uniform = vec![1.0 / self.net.heads() as f64; self.net.heads()];
        let n = self.dataset.len();
        let d = self.net.feature_dim();
        let mut phi = Matrix::zeros(n, d);
        let mut phi_next = Matrix::zeros(n, d);
        for (i, t) in self.dataset.transitions().iter().enumerate() {
            phi.row_mut(i)
                .copy_from_slice(&self.net.features(Which::Online, &t.obs, t.action)?);
            let next_q = mix_heads(&self.next_values[i], &uniform);
            let row = phi_next.row_mut(i);
            for (a, w) in next_feature_actions(t, &next_q, &ctx) {
                let f = self.net.features(Which::Online, &t.next_obs, a)?;
                for (r, v) in row.iter_mut().zip(f) {
                    *r += w * v;
                }
            }
        }
        FeaturePair::new(phi, phi_next, self.cfg.gamma)
    }

    /// Metrics over the whole dataset at the current parameters.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let ctx = self.backup_context();
        let uniform = vec![1.0 / self.net.heads() as f64; self.net.heads()];
        let error_loss = self.cfg.loss_head.error_loss();
        let mut loss = 0.0;
        let mut q_total = 0.0;
        for (i, t) in self.dataset.transitions().iter().enumerate() {
            let q = self.net.q_values(Which::Online, &t.obs)?[t.action];
            let next_q = mix_heads(&self.next_values[i], &uniform);
            let target = backup_target(t, i, &next_q, &ctx)?;
            loss += error_loss.eval(q - target).0;
            q_total += q;
        }
        let n = self.dataset.len() as f64;
        let pair = self.feature_pair()?;
        let eval_return = match &self.eval {
            Some(e) => evaluate_policy(
                &e.grid,
                &e.obs_map,
                &self.net,
                self.cfg.eval_episodes.max(1),
                self.cfg.eval_max_len,
                0.0,
                stream(self.cfg.seed, STREAM_EVAL).random(),
            )?,
            None => f64::NAN,
        };
        let mean_q = q_total / n;
        Ok(Checkpoint {
            step: self.steps_done,
            loss: loss / n,
            mean_q,
            feat_dot: mean_feature_dot(&pair)?,
            cosine: mean_cosine(&pair).map_or(f64::NAN, |c| c.mean),
            srank: srank(pair.phi(), self.cfg.srank_delta)?,
            eval_return,
            r_td: implicit_reg_value(&pair, None)?,
            diverged: !mean_q.is_finite() || mean_q.abs() > DIVERGENCE_CAP,
        })
    }

    /// Trains for the configured number of steps, checkpointing every
    /// `eval_every` steps and at the end. Divergence truncates the trace.
    pub fn run(mut self, provenance: Vec<(String, String)>) -> Result<(MetricTrace, QNetwork)> {
        let mut trace = MetricTrace::new(provenance);
        while self.steps_done < self.cfg.total_steps {
            if let Err(e) = self.step() {
                match e {
                    Error::Numeric(msg) => {
                        log::warn!("run diverged: {msg}");
                        trace.push(diverged_checkpoint(self.steps_done + 1))?;
                        return Ok((trace, self.net));
                    }
                    other => return Err(other),
                }
            }
            if self.steps_done % self.cfg.eval_every == 0 || self.steps_done == self.cfg.total_steps {
                let c = match self.checkpoint() {
                    Ok(c) => c,
                    Err(Error::Numeric(msg)) => {
                        log::warn!("checkpoint failed: {msg}");
                        diverged_checkpoint(self.steps_done)
                    }
                    Err(e) => return Err(e),
                };
                let diverged = c.diverged;
                log::debug!(
                    "step {} loss {:.4e} mean_q {:.4} feat_dot {:.4} srank {}",
                    c.step,
                    c.loss,
                    c.mean_q,
                    c.feat_dot,
                    c.srank
                );
                trace.push(c)?;
                if diverged {
                    break;
                }
            }
        }
        Ok((trace, self.net))
    }
}

fn diverged_checkpoint(step: usize) -> Checkpoint {
    Checkpoint {
        step,
        loss: f64::NAN,
        mean_q: f64::NAN,
        feat_dot: f64::NAN,
        cosine: f64::NAN,
        srank: 0,
        eval_return: f64::NAN,
        r_td: f64::NAN,
        diverged: true,
    }
}
