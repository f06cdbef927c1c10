//! Q-network with a delayed target copy.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::envdata::{QFunction, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::numerics::{Activation, HeadMode, Matrix, MlpParams, Tape};

/// Which parameter set to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Online,
    Target,
}

/// Online and target parameters sharing one architecture.
///
/// With `heads = K`, a multi-head network emits `K * |A|` outputs laid out
/// head-major (`k * |A| + a`); a state-action network emits `K` outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    params: MlpParams,
    target: MlpParams,
    heads: usize,
    obs_dim: usize,
}

impl QNetwork {
    /// `hidden` lists the hidden widths; the last one is the feature dimension.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        head_mode: HeadMode,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::config("a Q-network needs at least one head"));
        }
        let (input, output) = match head_mode {
            HeadMode::StateInputMultiHead => (obs_dim, heads * NUM_ACTIONS),
            HeadMode::StateActionInputScalar => (obs_dim + NUM_ACTIONS, heads),
        };
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let params = MlpParams::init(&sizes, head_mode, rng)?;
        QNetwork::from_params(params, heads)
    }

    pub fn from_params(params: MlpParams, heads: usize) -> Result<Self> {
        if heads == 0 {
            return Err(Error::config("a Q-network needs at least one head"));
        }
        let obs_dim = match params.head_mode() {
            HeadMode::StateInputMultiHead => {
                if params.output_dim() != heads * NUM_ACTIONS {
                    return Err(Error::shape(format!(
                        "multi-head network with {} outputs cannot hold {} heads of {} actions",
                        params.output_dim(),
                        heads,
                        NUM_ACTIONS
                    )));
                }
                params.input_dim()
            }
            HeadMode::StateActionInputScalar => {
                if params.output_dim() != heads || params.input_dim() <= NUM_ACTIONS {
                    return Err(Error::shape("state-action network must take obs + one-hot action and emit one value per head"));
                }
                params.input_dim() - NUM_ACTIONS
            }
        };
        Ok(QNetwork {
            target: params.clone(),
            params,
            heads,
            obs_dim,
        })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn target_params(&self) -> &MlpParams {
        &self.target
    }

    pub fn set_target(&mut self, target: MlpParams) -> Result<()> {
        if target.sizes() != self.params.sizes() || target.head_mode() != self.params.head_mode() {
            return Err(Error::shape("target parameters differ in architecture"));
        }
        self.target = target;
        Ok(())
    }

    /// Hard update `θ̄ ← θ`.
    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.params);
    }

    pub fn head_mode(&self) -> HeadMode {
        self.params.head_mode()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.params.feature_dim()
    }

    pub fn get(&self, which: Which) -> &MlpParams {
        match which {
            Which::Online => &self.params,
            Which::Target => &self.target,
        }
    }

    /// Network input for `(obs, action)`; the action is ignored in multi-head mode.
    pub fn input(&self, obs: &[f64], action: usize) -> Result<Vec<f64>> {
        input_for(self.head_mode(), self.obs_dim, obs, action)
    }

    /// Position of `Q_k(s, a)` within the output of the tape for `(s, a)`.
    pub fn output_index(&self, head: usize, action: usize) -> usize {
        match self.head_mode() {
            HeadMode::StateInputMultiHead => head * NUM_ACTIONS + action,
            HeadMode::StateActionInputScalar => head,
        }
    }

    pub fn tape(&self, which: Which, obs: &[f64], action: usize) -> Result<Tape> {
        self.get(which).forward_tape(&self.input(obs, action)?)
    }

    /// `Q_k(s, a)` for every head and action, flattened head-major.
    pub fn head_values(&self, which: Which, obs: &[f64]) -> Result<Vec<f64>> {
        let p = self.get(which);
        match self.head_mode() {
            HeadMode::StateInputMultiHead => Ok(p.forward_tape(&self.input(obs, 0)?)?.q_values().to_vec()),
            HeadMode::StateActionInputScalar => {
                let mut out = vec![0.0; self.heads * NUM_ACTIONS];
                for a in 0..NUM_ACTIONS {
                    let tape = p.forward_tape(&self.input(obs, a)?)?;
                    for (k, &q) in tape.q_values().iter().enumerate() {
                        out[k * NUM_ACTIONS + a] = q;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Head-averaged action values.
    pub fn q_values(&self, which: Which, obs: &[f64]) -> Result<[f64; NUM_ACTIONS]> {
        let hv = self.head_values(which, obs)?;
        Ok(mix_heads(&hv, &vec![1.0 / self.heads as f64; self.heads]))
    }

    /// Penultimate-layer features `φ(s, a)`.
    pub fn features(&self, which: Which, obs: &[f64], action: usize) -> Result<Vec<f64>> {
        Ok(self.tape(which, obs, action)?.features().to_vec())
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let sizes: Vec<String> = p.sizes().iter().map(|s| s.to_string()).collect();
        let mut out = format!(
            "# coadapt-params sizes={} head_mode={} heads={} activation=relu\n",
            sizes.join(";"),
            p.head_mode().name(),
            self.heads
        );
        for (w, b) in p.weights().iter().zip(p.biases()) {
            for r in 0..w.rows() {
                let row: Vec<String> = w.row(r).iter().map(|v| v.to_string()).collect();
                writeln!(out, "w,{}", row.join(",")).expect("writing to a String");
            }
            let row: Vec<String> = b.iter().map(|v| v.to_string()).collect();
            writeln!(out, "b,{}", row.join(",")).expect("writing to a String");
        }
        out
    }

    /// Reads parameters written by [`QNetwork::to_text`]; the target copy equals the online one.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(1, "empty parameter file"))?;
        let rest = header
            .strip_prefix("# coadapt-params")
            .ok_or_else(|| Error::parse(1, "missing parameter header"))?;
        let mut sizes = None;
        let mut head_mode = None;
        let mut heads = None;
        for tok in rest.split_whitespace() {
            match tok.split_once('=') {
                Some(("sizes", v)) => {
                    sizes = Some(
                        v.split(';')
                            .map(|s| s.parse::<usize>().map_err(|_| Error::parse(1, "bad layer size")))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                Some(("head_mode", v)) => {
                    head_mode = Some(HeadMode::parse(v).ok_or_else(|| Error::parse(1, format!("unknown head mode '{v}'")))?)
                }
                Some(("heads", v)) => heads = Some(v.parse::<usize>().map_err(|_| Error::parse(1, "bad head count"))?),
                _ => {}
            }
        }
        let sizes = sizes.ok_or_else(|| Error::parse(1, "header lacks sizes"))?;
        let head_mode = head_mode.ok_or_else(|| Error::parse(1, "header lacks head_mode"))?;
        let heads = heads.ok_or_else(|| Error::parse(1, "header lacks heads"))?;
        if sizes.len() < 2 {
            return Err(Error::parse(1, "need at least two layer sizes"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut lineno = 1;
        let mut next_row = |tag: &str, len: usize| -> Result<Vec<f64>> {
            lineno += 1;
            let line = lines.next().ok_or_else(|| Error::parse(lineno, "parameter file ends early"))?;
            let mut parts = line.split(',');
            if parts.next() != Some(tag) {
                return Err(Error::parse(lineno, format!("expected a '{tag}' row")));
            }
            let row = parts
                .map(|v| v.parse::<f64>().map_err(|_| Error::parse(lineno, format!("'{v}' is not a number"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != len {
                return Err(Error::parse(lineno, format!("expected {len} values, found {}", row.len())));
            }
            Ok(row)
        };
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let mut data = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_out {
                data.extend(next_row("w", fan_in)?);
            }
            weights.push(Matrix::new(fan_out, fan_in, data)?);
            biases.push(next_row("b", fan_out)?);
        }
        let params = MlpParams::new(weights, biases, Activation::Relu, head_mode)?;
        QNetwork::from_params(params, heads)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        QNetwork::parse(&text)
    }
}

pub(crate) fn input_for(head_mode: HeadMode, obs_dim: usize, obs: &[f64], action: usize) -> Result<Vec<f64>> {
    if obs.len() != obs_dim {
        return Err(Error::shape(format!(
            "observation of length {} for a network expecting {}",
            obs.len(),
            obs_dim
        )));
    }
    match head_mode {
        HeadMode::StateInputMultiHead => Ok(obs.to_vec()),
        HeadMode::StateActionInputScalar => {
            if action >= NUM_ACTIONS {
                return Err(Error::domain(format!("action {action} out of range")));
            }
            let mut v = Vec::with_capacity(obs_dim + NUM_ACTIONS);
            v.extend_from_slice(obs);
            v.extend((0..NUM_ACTIONS).map(|a| if a == action { 1.0 } else { 0.0 }));
            Ok(v)
        }
    }
}

/// `Σ_k w_k Q_k(·)` from head-major values.
pub fn mix_heads(head_values: &[f64], weights: &[f64]) -> [f64; NUM_ACTIONS] {
    let mut out = [0.0; NUM_ACTIONS];
    for (k, &w) in weights.iter().enumerate() {
        for (a, o) in out.iter_mut().enumerate() {
            *o += w * head_values[k * NUM_ACTIONS + a];
        }
    }
    out
}

impl QFunction for QNetwork {
    fn action_values(&self, obs: &[f64]) -> Result<[f64; NUM_ACTIONS]> {
        self.q_values(Which::Online, obs)
    }
}
