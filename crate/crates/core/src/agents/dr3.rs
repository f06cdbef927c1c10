//! The DR3 feature dot-product penalty and its label-noise generalization.

use crate::analysis::{lyapunov_iterate, FeaturePair};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dr3Variant {
    Off,
    LastLayerDot,
    LastLayerDotStopGrad,
    LabelNoiseGeneralized,
}

impl Dr3Variant {
    pub fn name(self) -> &'static str {
        match self {
            Dr3Variant::Off => "off",
            Dr3Variant::LastLayerDot => "dot",
            Dr3Variant::LastLayerDotStopGrad => "dot-stopgrad",
            Dr3Variant::LabelNoiseGeneralized => "label-noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Dr3Variant::Off),
            "dot" => Ok(Dr3Variant::LastLayerDot),
            "dot-stopgrad" => Ok(Dr3Variant::LastLayerDotStopGrad),
            "label-noise" => Ok(Dr3Variant::LabelNoiseGeneralized),
            other => Err(Error::config(format!("unknown DR3 variant '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dr3Config {
    pub variant: Dr3Variant,
    pub coefficient: f64,
    pub lyapunov_iters: usize,
    pub lyapunov_lr: f64,
}

impl Dr3Config {
    pub fn off() -> Self {
        Dr3Config {
            variant: Dr3Variant::Off,
            coefficient: 0.0,
            lyapunov_iters: 20,
            lyapunov_lr: 1e-2,
        }
    }

    pub fn dot(coefficient: f64) -> Self {
        if coefficient == 0.0 {
            return Dr3Config::off();
        }
        Dr3Config {
            variant: Dr3Variant::LastLayerDot,
            coefficient,
            ..Dr3Config::off()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coefficient >= 0.0) || !self.coefficient.is_finite() {
            return Err(Error::config(format!("DR3 coefficient {} must be non-negative", self.coefficient)));
        }
        if (self.coefficient == 0.0) != (self.variant == Dr3Variant::Off) {
            return Err(Error::config("DR3 coefficient must be zero exactly when the variant is off"));
        }
        if self.variant == Dr3Variant::LabelNoiseGeneralized && (self.lyapunov_iters == 0 || !(self.lyapunov_lr > 0.0)) {
            return Err(Error::config("label-noise DR3 needs positive Lyapunov iterations and step size"));
        }
        Ok(())
    }
}

impl Default for Dr3Config {
    fn default() -> Self {
        Dr3Config::off()
    }
}

/// Penalty value with gradients with respect to each feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dr3Value {
    pub value: f64,
    pub d_phi: Matrix,
    /// `None` when the gradient through the next-state features is stopped.
    pub d_phi_next: Option<Matrix>,
}

/// `Σ_i ⟨φ_i, φ'_i⟩`.
pub fn dr3_penalty(phi: &Matrix, phi_next: &Matrix, stop_grad_second: bool) -> Result<Dr3Value> {
    if phi.shape() != phi_next.shape() {
        return Err(Error::shape(format!(
            "features {:?} and next features {:?} differ in shape",
            phi.shape(),
            phi_next.shape()
        )));
    }
    let value = (0..phi.rows()).map(|i| dot(phi.row(i), phi_next.row(i))).sum();
    Ok(Dr3Value {
        value,
        d_phi: phi_next.clone(),
        d_phi_next: (!stop_grad_second).then(|| phi.clone()),
    })
}

/// `Σ_i φ_iᵀ Σ φ'_i` for a constant symmetric `Σ`.
pub fn dr3_generalized(phi: &Matrix, phi_next: &Matrix, sigma: &Matrix) -> Result<Dr3Value> {
    if phi.shape() != phi_next.shape() {
        return Err(Error::shape("features and next features differ in shape"));
    }
    if sigma.shape() != (phi.cols(), phi.cols()) {
        return Err(Error::shape(format!("sigma {:?} for {} features", sigma.shape(), phi.cols())));
    }
    // rows of ΦΣ and Φ'Σ (Σ symmetric)
    let phi_s = phi.matmul(sigma)?;
    let next_s = phi_next.matmul(sigma)?;
    let value = (0..phi.rows()).map(|i| dot(phi_s.row(i), phi_next.row(i))).sum();
    Ok(Dr3Value {
        value,
        d_phi: next_s,
        d_phi_next: Some(phi_s),
    })
}

/// Feature-space pseudo-Hessian and label-noise covariance of a batch:
/// `G = (1/n) Φᵀ(Φ − γΦ')`, `M = (1/n) ΦᵀΦ`.
pub fn label_noise_moments(pair: &FeaturePair) -> Result<(Matrix, Matrix)> {
    if pair.is_empty() {
        return Err(Error::domain("label-noise moments of an empty batch"));
    }
    let inv = 1.0 / pair.len() as f64;
    let diff = pair.phi().sub(&pair.phi_next().scale(pair.gamma()))?;
    let g = pair.phi().t_matmul(&diff)?.scale(inv);
    let m = pair.phi().t_matmul(pair.phi())?.scale(inv);
    Ok((g, m))
}

/// `Σ*_M` after `iters` Lyapunov steps with step size `eta`.
pub fn label_noise_sigma(pair: &FeaturePair, eta: f64, iters: usize) -> Result<Matrix> {
    let (g, m) = label_noise_moments(pair)?;
    Ok(lyapunov_iterate(&g, &m, eta, iters)?.sigma)
}

/// Label-noise DR3 on a feature pair; `Σ*_M` is held constant.
pub fn dr3_label_noise_penalty(pair: &FeaturePair, eta: f64, iters: usize) -> Result<(Dr3Value, Matrix)> {
    if iters == 0 {
        return Err(Error::domain("Lyapunov iteration count must be positive"));
    }
    let sigma = label_noise_sigma(pair, eta, iters)?;
    let v = dr3_generalized(pair.phi(), pair.phi_next(), &sigma)?;
    Ok((v, sigma))
}
