//! Loss heads: squared/Huber TD error, the CQL penalty and REM mixing.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Pointwise error loss applied to `prediction − target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ErrorLoss {
    /// `½ e²`.
    Squared,
    /// `½ e²` for `|e| ≤ δ`, `δ(|e| − ½δ)` beyond.
    Huber { delta: f64 },
}

impl ErrorLoss {
    /// Loss value and its derivative with respect to the error.
    pub fn eval(self, err: f64) -> (f64, f64) {
        match self {
            ErrorLoss::Squared => (0.5 * err * err, err),
            ErrorLoss::Huber { delta } => {
                if err.abs() <= delta {
                    (0.5 * err * err, err)
                } else {
                    (delta * (err.abs() - 0.5 * delta), delta * err.signum())
                }
            }
        }
    }
}

/// A scalar with its gradient with respect to the listed inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Max-shifted `log Σ exp`.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `α (logsumexp(q) − q[a_data])` and its gradient in `q`.
pub fn cql_penalty(q_row: &[f64], data_action: usize, alpha: f64) -> Result<ValueGrad> {
    if !(alpha >= 0.0) {
        return Err(Error::domain(format!("CQL alpha {alpha} must be non-negative")));
    }
    if data_action >= q_row.len() {
        return Err(Error::domain(format!("data action {data_action} outside {} actions", q_row.len())));
    }
    let lse = logsumexp(q_row);
    let grad = q_row
        .iter()
        .enumerate()
        .map(|(b, &q)| alpha * ((q - lse).exp() - if b == data_action { 1.0 } else { 0.0 }))
        .collect();
    Ok(ValueGrad {
        value: alpha * (lse - q_row[data_action]),
        grad,
    })
}

/// Weights drawn uniformly from the probability simplex (normalized exponentials).
pub fn sample_simplex<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

pub fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::domain("simplex weights must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("simplex weights sum to {total}")));
    }
    Ok(())
}

/// REM loss on one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct RemLoss {
    pub prediction: f64,
    pub value: f64,
    /// Derivative with respect to each head's prediction.
    pub grad: Vec<f64>,
}

/// Error loss between `Σ_k α_k Q_k(s,a)` and a target already built from the
/// same convex combination of target heads.
pub fn rem_loss(head_q: &[f64], target: f64, weights: &[f64], loss: ErrorLoss) -> Result<RemLoss> {
    check_simplex(weights)?;
    if head_q.len() != weights.len() {
        return Err(Error::shape(format!("{} heads but {} weights", head_q.len(), weights.len())));
    }
    let prediction: f64 = head_q.iter().zip(weights).map(|(q, w)| q * w).sum();
    let (value, d) = loss.eval(prediction - target);
    Ok(RemLoss {
        prediction,
        value,
        grad: weights.iter().map(|w| d * w).collect(),
    })
}
