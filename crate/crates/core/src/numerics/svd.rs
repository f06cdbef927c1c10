//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations.

use super::matrix::{axpy, dot, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Thin SVD `A = U diag(s) Vᵀ` with `s` descending.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows x k`, orthonormal columns (zero columns for zero singular values).
    pub u: Matrix,
    pub s: Vec<f64>,
    /// `cols x k`, orthonormal columns.
    pub v: Matrix,
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::numeric("matrix has non-finite entries"));
    }
    if a.rows() >= a.cols() {
        let (u_cols, s, v_cols) = jacobi(a)?;
        Ok(Svd {
            u: columns_to_matrix(&u_cols, a.rows()),
            s,
            v: columns_to_matrix(&v_cols, a.cols()),
        })
    } else {
        let (v_cols, s, u_cols) = jacobi(&a.transpose())?;
        Ok(Svd {
            u: columns_to_matrix(&u_cols, a.rows()),
            s,
            v: columns_to_matrix(&v_cols, a.cols()),
        })
    }
}

/// Singular values only, descending; length `min(rows, cols)`.
pub fn svd_values(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(Error::numeric("matrix has non-finite entries"));
    }
    let work = if a.rows() >= a.cols() {
        a.clone()
    } else {
        a.transpose()
    };
    Ok(jacobi_values(&work)?)
}

fn matrix_columns(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.cols()).map(|j| a.col(j)).collect()
}

fn columns_to_matrix(cols: &[Vec<f64>], rows: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Orthogonalises the columns of a tall matrix; returns `(U columns, s, V columns)`.
fn jacobi(a: &Matrix) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.cols();
    let mut u = matrix_columns(a);
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    sweep_until_orthogonal(&mut u, Some(&mut v))?;
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = u.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u_out = Vec::with_capacity(n);
    let mut v_out = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for &j in &order {
        let sigma = norms[j];
        let col = if sigma > f64::MIN_POSITIVE {
            u[j].iter().map(|x| x / sigma).collect()
        } else {
            vec![0.0; u[j].len()]
        };
        u_out.push(col);
        v_out.push(v[j].clone());
        s.push(sigma);
    }
    Ok((u_out, s, v_out))
}

fn jacobi_values(a: &Matrix) -> Result<Vec<f64>> {
    let mut u = matrix_columns(a);
    sweep_until_orthogonal(&mut u, None)?;
    let mut s: Vec<f64> = u.iter().map(|c| dot(c, c).sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

fn sweep_until_orthogonal(u: &mut [Vec<f64>], mut v: Option<&mut Vec<Vec<f64>>>) -> Result<()> {
    let n = u.len();
    let tol = 4.0 * f64::EPSILON;
    // columns this small relative to the whole matrix are rounding noise
    let total: f64 = u.iter().map(|c| dot(c, c)).sum();
    let negligible = total * f64::EPSILON * f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(&u[i], &u[i]);
                let beta = dot(&u[j], &u[j]);
                let gamma = dot(&u[i], &u[j]);
                if gamma == 0.0
                    || alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= tol * alpha.sqrt() * beta.sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(u, i, j, c, s);
                if let Some(v) = v.as_deref_mut() {
                    rotate(v, i, j, c, s);
                }
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(Error::numeric(format!(
        "one-sided Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"
    )))
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(j);
    let ci = &mut left[i];
    let cj = &mut right[0];
    for k in 0..ci.len() {
        let a = ci[k];
        let b = cj[k];
        ci[k] = c * a - s * b;
        cj[k] = s * a + c * b;
    }
}

/// Minimum-norm least-squares solution of `a x = b`, discarding singular
/// values below `rcond * s_max`.
///
/// Returns the solution and the residual norm `‖a x - b‖`.
pub fn lstsq(a: &Matrix, b: &[f64], rcond: f64) -> Result<(Vec<f64>, f64)> {
    if b.len() != a.rows() {
        return Err(Error::shape(format!(
            "right-hand side of length {} for {} rows",
            b.len(),
            a.rows()
        )));
    }
    let dec = svd(a)?;
    let cutoff = rcond * dec.s.first().copied().unwrap_or(0.0);
    let mut x = vec![0.0; a.cols()];
    for (k, &sigma) in dec.s.iter().enumerate() {
        if sigma <= cutoff || sigma == 0.0 {
            continue;
        }
        let uk = dec.u.col(k);
        let coef = dot(&uk, b) / sigma;
        axpy(coef, &dec.v.col(k), &mut x);
    }
    let ax = a.matvec(&x)?;
    let resid = ax
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    Ok((x, resid))
}
