//! First-order optimizers over [`MlpParams`].

use super::mlp::{Gradients, MlpParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// In-place Adam update.
    pub fn update(&mut self, params: &mut MlpParams, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        check_update(params, grads, cfg.lr)?;
        if !self.m.is_congruent(params) {
            return Err(Error::shape("optimizer state built for another architecture"));
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let tensors = params
            .slices_mut()
            .zip(grads.slices())
            .zip(self.m.slices_mut().zip(self.v.slices_mut()));
        for ((p, g), (m, v)) in tensors {
            adam_kernel(p, g, m, v, cfg, bc1, bc2);
        }
        Ok(())
    }
}

#[inline]
fn adam_kernel(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, bc1: f64, bc2: f64) {
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam on raw slices; `t` is the 1-based step count after this update.
pub fn adam_update_slice(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("non-finite gradient entry"));
    }
    if p.len() != g.len() || m.len() != p.len() || v.len() != p.len() {
        return Err(Error::shape("adam slices differ in length"));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    adam_kernel(p, g, m, v, cfg, bc1, bc2);
    Ok(())
}

fn check_update(params: &MlpParams, grads: &Gradients, lr: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::domain(format!("learning rate {lr} must be finite and non-negative")));
    }
    if !grads.is_congruent(params) {
        return Err(Error::shape("gradients do not match parameter shapes"));
    }
    if !grads.is_finite() {
        return Err(Error::numeric("non-finite gradient entry"));
    }
    Ok(())
}

pub fn sgd_update(params: &mut MlpParams, grads: &Gradients, lr: f64) -> Result<()> {
    check_update(params, grads, lr)?;
    for (p, g) in params.slices_mut().zip(grads.slices()) {
        for (pi, gi) in p.iter_mut().zip(g) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

pub fn sgd_step(params: &MlpParams, grads: &Gradients, lr: f64) -> Result<MlpParams> {
    let mut next = params.clone();
    sgd_update(&mut next, grads, lr)?;
    Ok(next)
}

pub fn adam_step(
    params: &MlpParams,
    grads: &Gradients,
    state: AdamState,
    cfg: &AdamConfig,
) -> Result<(MlpParams, AdamState)> {
    let mut next = params.clone();
    let mut state = state;
    state.update(&mut next, grads, cfg)?;
    Ok((next, state))
}

/// Optimizer choice threaded through a training run.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { cfg: AdamConfig, state: AdamState },
}

impl Optimizer {
    pub fn apply(&mut self, params: &mut MlpParams, grads: &Gradients) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_update(params, grads, *lr),
            Optimizer::Adam { cfg, state } => state.update(params, grads, cfg),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::Adam { cfg, .. } => cfg.lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, HeadMode, Matrix};

    fn scalar_net(w: f64) -> MlpParams {
        MlpParams::new(
            vec![Matrix::new(1, 1, vec![w]).unwrap()],
            vec![vec![0.0]],
            Activation::Relu,
            HeadMode::StateInputMultiHead,
        )
        .unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients {
        let mut w = Matrix::zeros(1, 1);
        w[(0, 0)] = g;
        Gradients {
            weights: vec![w],
            biases: vec![vec![0.0]],
        }
    }

    #[test]
    fn sgd_single_step() {
        let next = sgd_step(&scalar_net(1.0), &scalar_grad(2.0), 0.1).unwrap();
        assert!((next.weights()[0][(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        for g in [1e-3, 1.0, 1e4] {
            let (next, state) = adam_step(
                &scalar_net(0.0),
                &scalar_grad(g),
                AdamState::new(&scalar_net(0.0)),
                &AdamConfig {
                    lr: 0.05,
                    ..AdamConfig::default()
                },
            )
            .unwrap();
            assert_eq!(state.steps(), 1);
            assert!((next.weights()[0][(0, 0)] + 0.05).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_minimises_shifted_quadratic() {
        let cfg = AdamConfig {
            lr: 0.3,
            ..AdamConfig::default()
        };
        let (mut w, mut m, mut v) = ([0.0], [0.0], [0.0]);
        for t in 1..=100 {
            let g = [2.0 * (w[0] - 5.0)];
            adam_update_slice(&mut w, &g, &mut m, &mut v, t, &cfg).unwrap();
        }
        assert!((w[0] - 5.0).abs() < 0.1, "w = {}", w[0]);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let err = sgd_step(&scalar_net(1.0), &scalar_grad(f64::NAN), 0.1);
        assert!(matches!(err, Err(Error::Numeric(_))));
        let mut state = AdamState::new(&scalar_net(1.0));
        let mut p = scalar_net(1.0);
        let err = state.update(&mut p, &scalar_grad(f64::INFINITY), &AdamConfig::default());
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let p = scalar_net(1.5);
        assert_eq!(sgd_step(&p, &scalar_grad(3.0), 0.0).unwrap(), p);
    }
}
