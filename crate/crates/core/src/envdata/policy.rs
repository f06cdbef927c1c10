//! Stochastic behavior policies.

use rand::Rng;

use super::grid::{QTable, NUM_ACTIONS};
use crate::error::{Error, Result};

/// Relative tolerance below which two Q-values count as tied optima.
const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticPolicy {
    rows: Vec<[f64; NUM_ACTIONS]>,
    description: String,
}

impl StochasticPolicy {
    pub fn new(rows: Vec<[f64; NUM_ACTIONS]>, description: impl Into<String>) -> Result<Self> {
        for (s, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::domain(format!("policy row {s} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::domain(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(StochasticPolicy {
            rows,
            description: description.into(),
        })
    }

    pub fn uniform(num_states: usize) -> Self {
        StochasticPolicy {
            rows: vec![[1.0 / NUM_ACTIONS as f64; NUM_ACTIONS]; num_states],
            description: "uniform".into(),
        }
    }

    pub fn row(&self, state: usize) -> &[f64; NUM_ACTIONS] {
        &self.rows[state]
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Inverse-CDF draw from the row at `state`.
    pub fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.rows[state];
        let mut acc = 0.0;
        for (a, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // rounding left u above the last partial sum; fall back to the last supported action
        row.iter().rposition(|&p| p > 0.0).unwrap_or(NUM_ACTIONS - 1)
    }
}

/// Optimal actions share `p_opt`; the rest share `1 - p_opt` uniformly.
/// Rows where every action is optimal (terminal or wall cells) are uniform.
pub fn make_behavior_policy(q_star: &QTable, p_opt: f64) -> Result<StochasticPolicy> {
    if !(0.0..=1.0).contains(&p_opt) {
        return Err(Error::domain(format!("p_opt {p_opt} outside [0, 1]")));
    }
    let mut rows = Vec::with_capacity(q_star.num_states());
    for s in 0..q_star.num_states() {
        let q = q_star.row(s);
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = TIE_TOL * best.abs().max(1.0);
        let optimal: Vec<bool> = q.iter().map(|&v| v >= best - tol).collect();
        let n_opt = optimal.iter().filter(|&&o| o).count();
        let n_sub = NUM_ACTIONS - n_opt;
        let mut row = [0.0; NUM_ACTIONS];
        if n_sub == 0 {
            row = [1.0 / NUM_ACTIONS as f64; NUM_ACTIONS];
        } else {
            for (a, &o) in optimal.iter().enumerate() {
                row[a] = if o {
                    p_opt / n_opt as f64
                } else {
                    (1.0 - p_opt) / n_sub as f64
                };
            }
        }
        rows.push(row);
    }
    StochasticPolicy::new(rows, format!("eps-optimal(p_opt={p_opt})"))
}
