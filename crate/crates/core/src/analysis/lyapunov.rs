//! Fixed point of the discrete Lyapunov recursion
//! `Σ ← (I − ηG) Σ (I − ηG)ᵀ + η² M`.

use crate::error::{Error, Result};
use crate::numerics::{eig_complex, svd, Matrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LyapunovStop {
    /// Exactly this many iterations from `Σ = 0`.
    Iterations(usize),
    /// Iterate until the Frobenius residual drops below `tol`, at most `max_iters` times.
    Tolerance { tol: f64, max_iters: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovSolution {
    pub sigma: Matrix,
    /// `‖Σ − (AΣAᵀ + η²M)‖_F` at the returned `Σ`.
    pub residual: f64,
    pub iterations: usize,
}

/// Checked solve: `M` must be symmetric PSD and `I − ηG` contractive on the
/// smallest invariant subspace containing `M`'s range.
pub fn lyapunov_sigma(g: &Matrix, m: &Matrix, eta: f64, stop: LyapunovStop) -> Result<LyapunovSolution> {
    check_inputs(g, m, eta)?;
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    if m.asymmetry() > 1e-10 * scale {
        return Err(Error::domain("noise covariance M is not symmetric"));
    }
    if m.frobenius_norm() > 0.0 {
        let min_eig = eig_complex(m)?.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 * scale {
            return Err(Error::domain(format!("noise covariance M has negative eigenvalue {min_eig}")));
        }
    }
    let a = contraction(g, eta);
    let radius = restricted_spectral_radius(&a, m)?;
    if radius >= 1.0 {
        return Err(Error::Stability(format!(
            "I - eta*G has spectral radius {radius:.6} >= 1 on the support of M; \
             G needs eigenvalues with positive real part, or try a smaller eta"
        )));
    }
    iterate(&a, m, eta, stop)
}

/// Unchecked fixed-count iteration used inside training steps. Fails when the
/// series terms stop shrinking, which signals a step size that is too large.
pub fn lyapunov_iterate(g: &Matrix, m: &Matrix, eta: f64, iters: usize) -> Result<LyapunovSolution> {
    check_inputs(g, m, eta)?;
    if iters == 0 {
        return Err(Error::domain("Lyapunov iteration count must be positive"));
    }
    let a = contraction(g, eta);
    let sol = iterate(&a, m, eta, LyapunovStop::Iterations(iters))?;
    Ok(sol)
}

fn check_inputs(g: &Matrix, m: &Matrix, eta: f64) -> Result<()> {
    if !g.is_square() || g.shape() != m.shape() {
        return Err(Error::shape(format!(
            "G {:?} and M {:?} must be equal square shapes",
            g.shape(),
            m.shape()
        )));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::domain(format!("step size {eta} must be positive")));
    }
    Ok(())
}

fn contraction(g: &Matrix, eta: f64) -> Matrix {
    let mut a = g.scale(-eta);
    for i in 0..a.rows() {
        a[(i, i)] += 1.0;
    }
    a
}

fn step(a: &Matrix, sigma: &Matrix, noise: &Matrix) -> Result<Matrix> {
    a.matmul(sigma)?.matmul(&a.transpose())?.add(noise)
}

fn iterate(a: &Matrix, m: &Matrix, eta: f64, stop: LyapunovStop) -> Result<LyapunovSolution> {
    let noise = m.scale(eta * eta);
    let n = a.rows();
    let mut sigma = Matrix::zeros(n, n);
    let (max_iters, tol) = match stop {
        LyapunovStop::Iterations(k) => (k, None),
        LyapunovStop::Tolerance { tol, max_iters } => {
            if !(tol > 0.0) {
                return Err(Error::domain(format!("tolerance {tol} must be positive")));
            }
            (max_iters, Some(tol))
        }
    };
    let first_increment = noise.frobenius_norm();
    let mut iterations = 0;
    let mut residual = first_increment;
    while iterations < max_iters {
        let next = step(a, &sigma, &noise)?;
        let increment = next.sub(&sigma)?.frobenius_norm();
        if !next.is_finite() {
            return Err(Error::numeric("Lyapunov iteration produced non-finite values; try a smaller eta"));
        }
        if iterations > 0 && increment > 10.0 * first_increment && increment > 1e-300 {
            return Err(Error::numeric(format!(
                "Lyapunov iteration is growing (increment {increment:.3e}); try a smaller eta"
            )));
        }
        sigma = next;
        iterations += 1;
        // Σ_{k+1} − Σ_k is exactly the residual of Σ_k; recompute it at the new iterate
        if let Some(tol) = tol {
            residual = step(a, &sigma, &noise)?.sub(&sigma)?.frobenius_norm();
            if residual < tol {
                break;
            }
        }
    }
    if tol.is_none() {
        residual = step(a, &sigma, &noise)?.sub(&sigma)?.frobenius_norm();
    }
    // symmetrize away rounding drift
    let sym = sigma.add(&sigma.transpose())?.scale(0.5);
    Ok(LyapunovSolution {
        sigma: sym,
        residual,
        iterations,
    })
}

/// Spectral radius of `A` restricted to the smallest `A`-invariant subspace
/// containing the range of `M`.
fn restricted_spectral_radius(a: &Matrix, m: &Matrix) -> Result<f64> {
    let n = a.rows();
    let dec = svd(m)?;
    let smax = dec.s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0.0);
    }
    let rank_tol = 1e-10 * smax;
    let mut basis: Vec<Vec<f64>> = (0..dec.s.len())
        .filter(|&k| dec.s[k] > rank_tol)
        .map(|k| dec.u.col(k))
        .collect();
    loop {
        if basis.len() == n {
            break;
        }
        let mut candidates = basis.clone();
        for b in &basis {
            candidates.push(a.matvec(b)?);
        }
        let next = orthonormal_span(&candidates)?;
        if next.len() == basis.len() {
            basis = next;
            break;
        }
        basis = next;
    }
    let radius = |mat: &Matrix| -> Result<f64> {
        Ok(eig_complex(mat)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
    };
    if basis.len() == n {
        return radius(a);
    }
    // restricted operator Kᵀ A K on an invariant subspace with orthonormal basis K
    let k = basis.len();
    let mut kmat = Matrix::zeros(n, k);
    for (j, col) in basis.iter().enumerate() {
        for i in 0..n {
            kmat[(i, j)] = col[i];
        }
    }
    let restricted = kmat.t_matmul(&a.matmul(&kmat)?)?;
    radius(&restricted)
}

fn orthonormal_span(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = vectors[0].len();
    let mut mat = Matrix::zeros(n, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        for i in 0..n {
            mat[(i, j)] = v[i];
        }
    }
    let dec = svd(&mat)?;
    let smax = dec.s.first().copied().unwrap_or(0.0);
    Ok((0..dec.s.len())
        .filter(|&k| dec.s[k] > 1e-10 * smax)
        .map(|k| dec.u.col(k))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn zero_noise_gives_zero() {
        let s = lyapunov_sigma(&Matrix::identity(3), &Matrix::zeros(3, 3), 0.1, LyapunovStop::Iterations(20)).unwrap();
        assert_eq!(s.sigma.max_abs(), 0.0);
    }

    #[test]
    fn scalar_closed_form() {
        let stop = LyapunovStop::Tolerance {
            tol: 1e-15,
            max_iters: 100_000,
        };
        let s = lyapunov_sigma(&scalar(1.0), &scalar(1.0), 0.1, stop).unwrap();
        assert!((s.sigma[(0, 0)] - 0.01 / 0.19).abs() < 1e-12);
    }

    #[test]
    fn non_contractive_rejected() {
        let err = lyapunov_sigma(&scalar(-1.0), &scalar(1.0), 0.1, LyapunovStop::Iterations(5));
        assert!(matches!(err, Err(Error::Stability(_))));
        // the unstable direction is invisible to M, so the solve proceeds
        let g = Matrix::diag(&[1.0, -1.0]);
        let m = Matrix::diag(&[1.0, 0.0]);
        assert!(lyapunov_sigma(&g, &m, 0.1, LyapunovStop::Iterations(5)).is_ok());
    }

    #[test]
    fn growing_iteration_rejected() {
        assert!(lyapunov_iterate(&scalar(-5.0), &scalar(1.0), 0.5, 20).is_err());
        assert!(lyapunov_iterate(&scalar(1.0), &scalar(1.0), 0.1, 20).is_ok());
    }
}
