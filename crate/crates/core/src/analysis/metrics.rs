//! Co-adaptation metrics on feature pairs.

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, svd_values, Matrix};

/// Features at current and next state-action pairs, row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePair {
    phi: Matrix,
    phi_next: Matrix,
    gamma: f64,
}

impl FeaturePair {
    pub fn new(phi: Matrix, phi_next: Matrix, gamma: f64) -> Result<Self> {
        if phi.shape() != phi_next.shape() {
            return Err(Error::shape(format!(
                "features {:?} and next features {:?} differ in shape",
                phi.shape(),
                phi_next.shape()
            )));
        }
        if !gamma.is_finite() {
            return Err(Error::domain("discount must be finite"));
        }
        Ok(FeaturePair {
            phi,
            phi_next,
            gamma,
        })
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn phi_next(&self) -> &Matrix {
        &self.phi_next
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.phi.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.phi.cols()
    }

    /// `Σ_i ⟨φ_i, φ'_i⟩`.
    pub fn total_dot(&self) -> f64 {
        (0..self.len())
            .map(|i| dot(self.phi.row(i), self.phi_next.row(i)))
            .sum()
    }

    /// `Σ_i ‖φ_i‖²`.
    pub fn total_sq_norm(&self) -> f64 {
        self.phi.as_slice().iter().map(|v| v * v).sum()
    }
}

pub fn mean_feature_dot(pair: &FeaturePair) -> Result<f64> {
    if pair.is_empty() {
        return Err(Error::domain("feature pair has no rows"));
    }
    Ok(pair.total_dot() / pair.len() as f64)
}

/// Mean cosine similarity and the number of rows it averages over.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSummary {
    pub mean: f64,
    pub valid_rows: usize,
}

/// Rows where either vector has zero norm are skipped.
pub fn mean_cosine(pair: &FeaturePair) -> Result<CosineSummary> {
    let mut total = 0.0;
    let mut valid_rows = 0;
    for i in 0..pair.len() {
        let (a, b) = (pair.phi.row(i), pair.phi_next.row(i));
        let denom = norm(a) * norm(b);
        if denom == 0.0 {
            continue;
        }
        total += (dot(a, b) / denom).clamp(-1.0, 1.0);
        valid_rows += 1;
    }
    if valid_rows == 0 {
        return Err(Error::domain("cosine similarity undefined: every row has a zero vector"));
    }
    Ok(CosineSummary {
        mean: total / valid_rows as f64,
        valid_rows,
    })
}

pub const DEFAULT_SRANK_DELTA: f64 = 0.01;

/// Effective rank: the smallest `k` whose leading singular values hold a
/// `1 - δ` fraction of their sum. The zero matrix has rank 0.
pub fn srank(features: &Matrix, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("srank delta {delta} outside (0, 1)")));
    }
    let s = svd_values(features)?;
    Ok(srank_from_values(&s, delta))
}

/// [`srank`] on precomputed descending singular values.
pub fn srank_from_values(s: &[f64], delta: f64) -> usize {
    let total: f64 = s.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, &v) in s.iter().enumerate() {
        acc += v;
        // a relative slack keeps exact ties such as 99/100 from losing to rounding
        if acc / total >= 1.0 - delta - 1e-12 {
            return k + 1;
        }
    }
    s.len()
}

/// `Σ ⟨φ, φ'⟩ ≥ (1/γ) Σ ‖φ‖²`: sufficient for linear TD on these features
/// not to converge.
pub fn coadaptation_trace_test(pair: &FeaturePair) -> Result<bool> {
    let g = pair.gamma;
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::domain(format!("discount {g} outside (0, 1)")));
    }
    Ok(pair.total_dot() >= pair.total_sq_norm() / g)
}

/// Value of the last-layer implicit regularizer
/// `Σ φᵢᵀ Σ φᵢ − γ Σ φᵢᵀ Σ φ'ᵢ`; `sigma = None` means the identity.
pub fn implicit_reg_value(pair: &FeaturePair, sigma: Option<&Matrix>) -> Result<f64> {
    if pair.is_empty() {
        return Err(Error::domain("implicit regularizer of an empty batch"));
    }
    match sigma {
        None => Ok(pair.total_sq_norm() - pair.gamma * pair.total_dot()),
        Some(s) => {
            if s.shape() != (pair.dim(), pair.dim()) {
                return Err(Error::shape(format!(
                    "sigma {:?} for {}-dimensional features",
                    s.shape(),
                    pair.dim()
                )));
            }
            let mut total = 0.0;
            for i in 0..pair.len() {
                let sphi = s.matvec(pair.phi.row(i))?;
                total += dot(&sphi, pair.phi.row(i)) - pair.gamma * dot(&sphi, pair.phi_next.row(i));
            }
            Ok(total)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: &[&[f64]], b: &[&[f64]], gamma: f64) -> FeaturePair {
        FeaturePair::new(Matrix::from_rows(a).unwrap(), Matrix::from_rows(b).unwrap(), gamma).unwrap()
    }

    #[test]
    fn dot_examples() {
        let p = pair(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 0.0], &[0.0, 1.0]], 0.9);
        assert_eq!(mean_feature_dot(&p).unwrap(), 1.0);
        let p = pair(&[&[1.0, 0.0]], &[&[0.0, 1.0]], 0.9);
        assert_eq!(mean_feature_dot(&p).unwrap(), 0.0);
        let p = pair(&[&[1.0, 2.0], &[3.0, 4.0]], &[&[0.0, 1.0], &[5.0, 6.0]], 0.9);
        assert_eq!(mean_feature_dot(&p).unwrap(), 20.5);
    }

    #[test]
    fn cosine_examples() {
        let p = pair(&[&[1.0, 2.0]], &[&[2.0, 4.0]], 0.9);
        assert!((mean_cosine(&p).unwrap().mean - 1.0).abs() < 1e-15);
        let p = pair(&[&[1.0, 2.0]], &[&[-3.0, -6.0]], 0.9);
        assert!((mean_cosine(&p).unwrap().mean + 1.0).abs() < 1e-15);
        let p = pair(&[&[1.0, 0.0], &[0.0, 0.0]], &[&[1.0, 1.0], &[1.0, 1.0]], 0.9);
        let c = mean_cosine(&p).unwrap();
        assert_eq!(c.valid_rows, 1);
        assert!((c.mean - 0.5f64.sqrt()).abs() < 1e-12);
        let p = pair(&[&[0.0, 0.0]], &[&[1.0, 1.0]], 0.9);
        assert!(mean_cosine(&p).is_err());
    }

    #[test]
    fn srank_examples() {
        assert_eq!(srank(&Matrix::identity(100), 0.01).unwrap(), 99);
        assert_eq!(srank(&Matrix::outer(&[1.0, 2.0, 3.0], &[1.0, -1.0]), 0.3).unwrap(), 1);
        assert_eq!(srank(&Matrix::diag(&[10.0, 1.0, 1.0]), 0.01).unwrap(), 3);
        assert_eq!(srank(&Matrix::zeros(4, 3), 0.01).unwrap(), 0);
        assert!(srank(&Matrix::identity(2), 0.0).is_err());
    }

    #[test]
    fn trace_test_examples() {
        let p = pair(&[&[1.0, 2.0]], &[&[1.0, 2.0]], 0.9);
        assert!(!coadaptation_trace_test(&p).unwrap());
        let p = pair(&[&[1.0]], &[&[2.0]], 0.9);
        assert!(coadaptation_trace_test(&p).unwrap());
        let p = pair(&[&[1.0]], &[&[2.0]], 1.0);
        assert!(coadaptation_trace_test(&p).is_err());
    }

    #[test]
    fn implicit_reg_examples() {
        let p = pair(&[&[1.0, 2.0], &[0.5, -1.0]], &[&[0.0, 0.0], &[0.0, 0.0]], 0.9);
        assert!((implicit_reg_value(&p, None).unwrap() - 6.25).abs() < 1e-15);
        let p = pair(&[&[1.0, 2.0], &[0.5, -1.0]], &[&[0.3, 1.0], &[2.0, 0.1]], 0.9);
        let a = implicit_reg_value(&p, None).unwrap();
        let b = implicit_reg_value(&p, Some(&Matrix::identity(2))).unwrap();
        assert!((a - b).abs() < 1e-14);
    }
}
