//! Spectral stability of linear TD on fixed features, with a brute-force
//! simulation oracle.

use std::fmt;

use super::metrics::{coadaptation_trace_test, FeaturePair};
use crate::error::{Error, Result};
use crate::numerics::{eig_complex, lstsq, norm, Complex64, Matrix};

/// Default verdict tolerance, relative to `‖M_φ‖_F`.
pub const DEFAULT_STABILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    Stable,
    NonConvergent,
    Borderline,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::NonConvergent => "non-convergent",
            Verdict::Borderline => "borderline",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    /// Sorted by real part, then imaginary part.
    pub eigenvalues: Vec<Complex64>,
    pub verdict: Verdict,
    pub trace_condition_holds: bool,
    pub min_real_part: f64,
    /// Absolute tolerance actually applied.
    pub tol: f64,
}

/// `M_φ = Φᵀ(Φ − γΦ')`.
pub fn td_matrix(pair: &FeaturePair) -> Result<Matrix> {
    let diff = pair.phi().sub(&pair.phi_next().scale(pair.gamma()))?;
    pair.phi().t_matmul(&diff)
}

/// Classifies eigenvalues with an absolute tolerance.
pub fn classify(eigenvalues: &[Complex64], tol: f64) -> Verdict {
    if eigenvalues.iter().all(|l| l.re > tol) {
        Verdict::Stable
    } else if eigenvalues.iter().any(|l| l.re < -tol)
        || eigenvalues.iter().any(|l| l.re <= 0.0 && l.im.abs() > tol)
    {
        Verdict::NonConvergent
    } else {
        Verdict::Borderline
    }
}

/// Eigenvalues of `M_φ` and the stability verdict; `tol` is relative to
/// `‖M_φ‖_F`.
pub fn stability_spectrum(pair: &FeaturePair, tol: f64) -> Result<StabilityReport> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance {tol} must be positive")));
    }
    let m = td_matrix(pair)?;
    let abs_tol = tol * m.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut eigenvalues = eig_complex(&m)?;
    eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let min_real_part = eigenvalues.first().map_or(f64::INFINITY, |l| l.re);
    Ok(StabilityReport {
        verdict: classify(&eigenvalues, abs_tol),
        trace_condition_holds: coadaptation_trace_test(pair)?,
        min_real_part,
        tol: abs_tol,
        eigenvalues,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearTdRun {
    /// Monitored norm at step 0, every `record_every` steps, and the final step.
    pub trajectory: Vec<f64>,
    pub record_every: usize,
    pub final_weights: Vec<f64>,
    /// Least-squares TD fixed point, when one solves `M_φ w = Φᵀr`.
    pub fixed_point: Option<Vec<f64>>,
    pub diverged: bool,
    pub converged: bool,
}

impl LinearTdRun {
    pub fn final_error(&self) -> f64 {
        *self.trajectory.last().expect("trajectory holds the initial point")
    }
}

const TRAJECTORY_POINTS: usize = 1000;
/// Absolute error below which a run counts as converged.
pub const CONVERGED_ERROR: f64 = 1e-6;
/// Ratio of final to half-way error below which a run counts as converging.
pub const CONVERGED_SHRINK: f64 = 0.99;

/// Expected linear TD `w ← w − ηΦᵀ(Φw − r − γΦ'w)` from `w = 0`.
///
/// Monitors `‖w − w*‖` when a fixed point exists, otherwise `‖w‖`. A run
/// diverges when the monitored norm grows at least tenfold over its final
/// half, and converges when the error ends below [`CONVERGED_ERROR`] or its
/// final half shrinks it by at least the factor [`CONVERGED_SHRINK`].
pub fn simulate_linear_td(pair: &FeaturePair, rewards: &[f64], eta: f64, steps: usize) -> Result<LinearTdRun> {
    if rewards.len() != pair.len() {
        return Err(Error::shape(format!("{} rewards for {} transitions", rewards.len(), pair.len())));
    }
    if steps == 0 {
        return Err(Error::domain("simulation needs at least one step"));
    }
    if !(eta > 0.0) {
        return Err(Error::domain(format!("step size {eta} must be positive")));
    }
    let m = td_matrix(pair)?;
    let b = pair.phi().t_matvec(rewards)?;
    let scale = m.frobenius_norm().max(norm(&b)).max(1.0);
    let (w_star, resid) = lstsq(&m, &b, 1e-12)?;
    let fixed_point = (resid <= 1e-9 * scale).then_some(w_star);

    let d = pair.dim();
    let mut w = vec![0.0; d];
    let mut mw = vec![0.0; d];
    let monitor = |w: &[f64]| match &fixed_point {
        Some(ws) => w.iter().zip(ws).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        None => norm(w),
    };
    let record_every = (steps / TRAJECTORY_POINTS).max(1);
    let mut trajectory = vec![monitor(&w)];
    let half = steps / 2;
    let mut at_half = if half == 0 { trajectory[0] } else { f64::NAN };
    let data = m.as_slice();
    for k in 1..=steps {
        for (i, out) in mw.iter_mut().enumerate() {
            let row = &data[i * d..(i + 1) * d];
            *out = row.iter().zip(&w).map(|(a, x)| a * x).sum::<f64>() - b[i];
        }
        for (wi, g) in w.iter_mut().zip(&mw) {
            *wi -= eta * g;
        }
        if k == half {
            at_half = monitor(&w);
        }
        if k % record_every == 0 || k == steps {
            let e = monitor(&w);
            trajectory.push(e);
            if !e.is_finite() {
                break;
            }
        }
    }
    let final_error = *trajectory.last().expect("non-empty");
    let diverged = !final_error.is_finite() || final_error >= 10.0 * at_half && final_error > 0.0;
    let converged = final_error.is_finite()
        && fixed_point.is_some()
        && (final_error < CONVERGED_ERROR || final_error <= CONVERGED_SHRINK * at_half);
    Ok(LinearTdRun {
        trajectory,
        record_every,
        final_weights: w,
        fixed_point,
        diverged,
        converged,
    })
}
