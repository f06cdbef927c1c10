//! Fixed-architecture ReLU multilayer perceptron with hand-written
//! forward and reverse passes.
//!
//! The penultimate activation is exposed as the feature vector `φ`, so a
//! network output is always `q = W_last φ + b_last`.

use rand::Rng;

use super::matrix::{axpy, dot, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// How actions enter the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadMode {
    /// Input is the state observation; one output per action, `φ(s,a) = φ(s)`.
    StateInputMultiHead,
    /// Input is the observation concatenated with a one-hot action; scalar output.
    StateActionInputScalar,
}

impl HeadMode {
    pub fn name(self) -> &'static str {
        match self {
            HeadMode::StateInputMultiHead => "multi-head",
            HeadMode::StateActionInputScalar => "state-action",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "multi-head" => Some(HeadMode::StateInputMultiHead),
            "state-action" => Some(HeadMode::StateActionInputScalar),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
    head_mode: HeadMode,
}

/// Gradients congruent with an [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Output of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub q_values: Vec<f64>,
    pub features: Vec<f64>,
}

/// Activations recorded during a forward pass, consumed by the reverse pass.
#[derive(Clone, Debug)]
pub struct Tape {
    // activations[0] is the input, activations[k] the post-ReLU output of hidden layer k
    activations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn q_values(&self) -> &[f64] {
        &self.output
    }

    pub fn features(&self) -> &[f64] {
        self.activations.last().expect("tape always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

impl MlpParams {
    pub fn new(
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
        head_mode: HeadMode,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        if weights.len() != biases.len() {
            return Err(Error::shape(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != b.len() {
                return Err(Error::shape(format!(
                    "layer {}: {} outputs but bias of length {}",
                    k,
                    w.rows(),
                    b.len()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("layer {k}: non-finite bias")));
            }
            if k > 0 && weights[k - 1].rows() != w.cols() {
                return Err(Error::shape(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    k,
                    w.cols(),
                    k - 1,
                    weights[k - 1].rows()
                )));
            }
        }
        Ok(MlpParams {
            weights,
            biases,
            activation,
            head_mode,
        })
    }

    /// He-uniform weights (`U(-√(6/fan_in), √(6/fan_in))`) and zero biases.
    ///
    /// `sizes` lists every width from input to output, e.g. `[64, 32, 32, 5]`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], head_mode: HeadMode, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::shape(format!("invalid layer sizes {sizes:?}")));
        }
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(Matrix::new(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        MlpParams::new(weights, biases, Activation::Relu, head_mode)
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head_mode(&self) -> HeadMode {
        self.head_mode
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].cols()
    }

    /// Every layer width from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.weights.iter().map(Matrix::rows));
        s
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.as_slice().len() + b.len())
            .sum()
    }

    /// Parameter storage as flat slices, weights then bias per layer.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().flatten().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().flatten().all(|v| v.is_finite())
    }

    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        if input.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input of length {} for a network expecting {}",
                input.len(),
                self.input_dim()
            )));
        }
        let last = self.weights.len() - 1;
        let mut activations = Vec::with_capacity(self.weights.len());
        activations.push(input.to_vec());
        for k in 0..last {
            let a = affine(&self.weights[k], &self.biases[k], &activations[k]);
            activations.push(a.into_iter().map(relu).collect());
        }
        let output = affine(&self.weights[last], &self.biases[last], &activations[last]);
        Ok(Tape {
            activations,
            output,
        })
    }

    /// Accumulates into `grads` the gradient of
    /// `dqᵀ q + dfeatᵀ φ` with respect to every parameter.
    pub fn backward_into(
        &self,
        tape: &Tape,
        dq: &[f64],
        dfeat: Option<&[f64]>,
        grads: &mut Gradients,
    ) -> Result<()> {
        if dq.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "upstream of length {} for {} outputs",
                dq.len(),
                self.output_dim()
            )));
        }
        if let Some(df) = dfeat {
            if df.len() != self.feature_dim() {
                return Err(Error::shape(format!(
                    "feature upstream of length {} for {} features",
                    df.len(),
                    self.feature_dim()
                )));
            }
        }
        if tape.activations.len() != self.weights.len() {
            return Err(Error::shape("tape recorded by a different architecture"));
        }
        let mut delta = dq.to_vec();
        for k in (0..self.weights.len()).rev() {
            let w = &self.weights[k];
            let a_in = &tape.activations[k];
            let gw = &mut grads.weights[k];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, a_in, gw.row_mut(o));
                }
            }
            for (gb, &d) in grads.biases[k].iter_mut().zip(&delta) {
                *gb += d;
            }
            if k == 0 {
                break;
            }
            let mut upstream = vec![0.0; w.cols()];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, w.row(o), &mut upstream);
                }
            }
            if k == self.weights.len() - 1 {
                if let Some(df) = dfeat {
                    for (u, &f) in upstream.iter_mut().zip(df) {
                        *u += f;
                    }
                }
            }
            // ReLU: a > 0 exactly when the pre-activation was positive
            for (u, &a) in upstream.iter_mut().zip(a_in) {
                if a <= 0.0 {
                    *u = 0.0;
                }
            }
            delta = upstream;
        }
        Ok(())
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn affine(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|o| dot(w.row(o), x) + b[o]).collect()
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn is_congruent(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(g, w)| g.shape() == w.shape())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(g, b)| g.len() == b.len())
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().flatten().copied().collect()
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.slices().flatten().all(|&v| v == 0.0)
    }

    /// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
    pub fn max_relative_error(&self, other: &Gradients, floor: f64) -> f64 {
        self.slices()
            .flatten()
            .zip(other.slices().flatten())
            .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
            .fold(0.0, f64::max)
    }
}

pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<Forward> {
    let tape = params.forward_tape(input)?;
    Ok(Forward {
        features: tape.features().to_vec(),
        q_values: tape.output,
    })
}

/// Exact gradient of `upstreamᵀ q(input)` with respect to every parameter.
pub fn mlp_backward(params: &MlpParams, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
    let tape = params.forward_tape(input)?;
    let mut grads = Gradients::zeros_like(params);
    params.backward_into(&tape, upstream, None, &mut grads)?;
    Ok(grads)
}

/// Central-difference estimate of the gradient [`mlp_backward`] computes.
pub fn finite_diff_grad(
    params: &MlpParams,
    input: &[f64],
    upstream: &[f64],
    step: f64,
) -> Result<Gradients> {
    if upstream.len() != params.output_dim() {
        return Err(Error::shape(format!(
            "upstream of length {} for {} outputs",
            upstream.len(),
            params.output_dim()
        )));
    }
    if input.len() != params.input_dim() {
        return Err(Error::shape(format!(
            "input of length {} for a network expecting {}",
            input.len(),
            params.input_dim()
        )));
    }
    let mut probe = params.clone();
    let flat = central_difference(
        |theta| {
            probe.assign_flat(theta);
            let q = mlp_forward(&probe, input).expect("shapes checked above").q_values;
            dot(upstream, &q)
        },
        &params.flatten(),
        step,
    )?;
    let mut estimate = Gradients::zeros_like(params);
    estimate.assign_flat(&flat);
    Ok(estimate)
}

/// `(f(x + h e_k) - f(x - h e_k)) / 2h` for every coordinate `k`.
pub fn central_difference<F>(mut f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::domain(format!(
            "finite-difference step {step} must be positive"
        )));
    }
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        x[k] = point[k] + step;
        let plus = f(&x);
        x[k] = point[k] - step;
        let minus = f(&x);
        x[k] = point[k];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

fn assign_flat<'a>(slices: impl Iterator<Item = &'a mut [f64]>, flat: &[f64]) {
    let mut offset = 0;
    for s in slices {
        s.copy_from_slice(&flat[offset..offset + s.len()]);
        offset += s.len();
    }
    debug_assert_eq!(offset, flat.len());
}

impl MlpParams {
    /// Overwrites every parameter from a flat vector in [`MlpParams::flatten`] order.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assign_flat(self.slices_mut(), flat);
    }
}

impl Gradients {
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assign_flat(self.slices_mut(), flat);
    }
}
