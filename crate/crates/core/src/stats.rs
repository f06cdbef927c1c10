//! Aggregate statistics over per-seed scores: IQM, bootstrap intervals and
//! probability of improvement.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};

/// Per-task lists of per-seed scores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunScores {
    tasks: BTreeMap<String, Vec<f64>>,
}

impl RunScores {
    pub fn new() -> Self {
        RunScores::default()
    }

    pub fn from_tasks<I, S>(tasks: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut out = RunScores::new();
        for (task, scores) in tasks {
            let task = task.into();
            if out.tasks.contains_key(&task) {
                return Err(Error::domain(format!("task '{task}' listed twice")));
            }
            if scores.is_empty() {
                return Err(Error::domain(format!("task '{task}' has no scores")));
            }
            for s in &scores {
                out.check(&task, *s)?;
            }
            out.tasks.insert(task, scores);
        }
        Ok(out)
    }

    fn check(&self, task: &str, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::numeric(format!("score {score} for task '{task}' is not finite")));
        }
        Ok(())
    }

    pub fn push(&mut self, task: &str, score: f64) -> Result<()> {
        self.check(task, score)?;
        self.tasks.entry(task.to_string()).or_default().push(score);
        Ok(())
    }

    pub fn tasks(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tasks.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn scores(&self, task: &str) -> Option<&[f64]> {
        self.tasks.get(task).map(Vec::as_slice)
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// All scores across tasks, in task order.
    pub fn all_scores(&self) -> Vec<f64> {
        self.tasks.values().flatten().copied().collect()
    }
}

/// Interquartile mean: drop `floor(n/4)` values from each end of the sorted
/// list and average the rest.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("IQM of an empty list"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::numeric("IQM input contains NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted.len() / 4;
    let kept = &sorted[cut..sorted.len() - cut];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Percentile bootstrap interval of the IQM at the given confidence level.
pub fn percentile_bootstrap_ci<R: Rng + ?Sized>(
    values: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::domain("bootstrap of an empty list"));
    }
    if resamples < 100 {
        return Err(Error::domain(format!("{resamples} bootstrap resamples; need at least 100")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("confidence level {level} outside (0, 1)")));
    }
    let n = values.len();
    let mut stats = Vec::with_capacity(resamples);
    let mut sample = vec![0.0; n];
    for _ in 0..resamples {
        for s in sample.iter_mut() {
            *s = values[rng.random_range(0..n)];
        }
        stats.push(iqm(&sample)?);
    }
    stats.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&stats, (1.0 - level) / 2.0);
    let hi = quantile_sorted(&stats, (1.0 + level) / 2.0);
    Ok((lo, hi))
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let v = sorted[i] + frac * (sorted[i + 1] - sorted[i]);
    // interpolation can round just outside the bracketing pair
    v.clamp(sorted[i], sorted[i + 1])
}

/// `P(X > Y)` from per-task Mann-Whitney statistics averaged over tasks.
pub fn prob_improvement(x: &RunScores, y: &RunScores) -> Result<f64> {
    let p = prob_improvement_exact(x, y)?;
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    // round the smaller of p and 1 − p so that swapping arguments gives exactly 1 − value
    if p <= half {
        ratio_to_f64(&p)
    } else {
        Ok(1.0 - ratio_to_f64(&(BigRational::one() - p))?)
    }
}

/// The same statistic as an exact rational.
pub fn prob_improvement_exact(x: &RunScores, y: &RunScores) -> Result<BigRational> {
    if x.is_empty() {
        return Err(Error::domain("probability of improvement over no tasks"));
    }
    if x.tasks.keys().ne(y.tasks.keys()) {
        return Err(Error::domain("probability of improvement needs the same task set on both sides"));
    }
    let mut total = BigRational::zero();
    for (task, xs) in &x.tasks {
        let ys = &y.tasks[task];
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::domain(format!("task '{task}' has no scores")));
        }
        // count in half-units: 2 per win, 1 per tie
        let mut halves: u64 = 0;
        for a in xs {
            for b in ys {
                if a > b {
                    halves += 2;
                } else if a == b {
                    halves += 1;
                }
            }
        }
        let pairs = (xs.len() * ys.len()) as u64;
        total += BigRational::new(BigInt::from(halves), BigInt::from(2 * pairs));
    }
    Ok(total / BigInt::from(x.tasks.len()))
}

fn ratio_to_f64(r: &BigRational) -> Result<f64> {
    r.to_f64().ok_or_else(|| Error::numeric("rational does not fit in f64"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_task(v: &[f64]) -> RunScores {
        RunScores::from_tasks([("t", v.to_vec())]).unwrap()
    }

    #[test]
    fn iqm_examples() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(iqm(&v).unwrap(), 4.5);
        assert_eq!(iqm(&[2.5; 7]).unwrap(), 2.5);
        assert_eq!(iqm(&[1.0, 2.0, 6.0]).unwrap(), 3.0);
        assert!(iqm(&[]).is_err());
    }

    #[test]
    fn bootstrap_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(percentile_bootstrap_ci(&[4.0; 10], 200, 0.95, &mut rng).unwrap(), (4.0, 4.0));
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = percentile_bootstrap_ci(&v, 10_000, 0.95, &mut rng).unwrap();
        let m = iqm(&v).unwrap();
        assert!(lo <= m && m <= hi);
        let a = percentile_bootstrap_ci(&v, 500, 0.9, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = percentile_bootstrap_ci(&v, 500, 0.9, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(percentile_bootstrap_ci(&v, 99, 0.9, &mut rng).is_err());
        assert!(percentile_bootstrap_ci(&v, 100, 1.0, &mut rng).is_err());
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(prob_improvement(&one_task(&[1.0, 3.0]), &one_task(&[2.0])).unwrap(), 0.5);
        assert_eq!(prob_improvement(&one_task(&[5.0, 6.0]), &one_task(&[1.0, 2.0])).unwrap(), 1.0);
        assert_eq!(prob_improvement(&one_task(&[1.0, 1.0]), &one_task(&[1.0])).unwrap(), 0.5);
        let other = RunScores::from_tasks([("u", vec![1.0])]).unwrap();
        assert!(prob_improvement(&one_task(&[1.0]), &other).is_err());
    }

    #[test]
    fn improvement_averages_tasks() {
        let x = RunScores::from_tasks([("a", vec![2.0]), ("b", vec![0.0])]).unwrap();
        let y = RunScores::from_tasks([("a", vec![1.0]), ("b", vec![1.0])]).unwrap();
        assert_eq!(prob_improvement(&x, &y).unwrap(), 0.5);
    }

    #[test]
    fn scores_validate() {
        assert!(RunScores::from_tasks([("a", vec![])]).is_err());
        assert!(RunScores::from_tasks([("a", vec![f64::NAN])]).is_err());
        let mut r = RunScores::new();
        r.push("a", 1.0).unwrap();
        assert!(r.push("a", f64::INFINITY).is_err());
        assert_eq!(r.scores("a"), Some(&[1.0][..]));
    }
}
