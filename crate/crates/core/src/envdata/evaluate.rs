//! Greedy rollouts of a learned Q-function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::{GridSpec, NUM_ACTIONS};
use super::observation::ObservationMap;
use crate::error::{Error, Result};

/// Anything that scores every action from an observation.
pub trait QFunction {
    fn action_values(&self, obs: &[f64]) -> Result<[f64; NUM_ACTIONS]>;
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy_action(q: &[f64; NUM_ACTIONS]) -> usize {
    let mut best = 0;
    for a in 1..NUM_ACTIONS {
        if q[a] > q[best] {
            best = a;
        }
    }
    best
}

/// Mean undiscounted return of epsilon-greedy rollouts from the start cell.
pub fn evaluate_policy<Q: QFunction + ?Sized>(
    spec: &GridSpec,
    obs_map: &ObservationMap,
    net: &Q,
    episodes: usize,
    max_len: usize,
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::domain("evaluation needs at least one episode"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::domain(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let observations = obs_map.observe_all(spec);
    let greedy: Vec<Option<usize>> = (0..spec.num_states())
        .map(|s| {
            if spec.is_valid_state(s) {
                net.action_values(&observations[s]).map(|q| Some(greedy_action(&q)))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut state = spec.start_state();
        for _ in 0..max_len {
            let action = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                rng.random_range(0..NUM_ACTIONS)
            } else {
                greedy[state].expect("agent occupies a valid cell")
            };
            let out = spec.step(state, action)?;
            total += out.reward;
            if out.terminal {
                break;
            }
            state = out.next_state;
        }
    }
    Ok(total / episodes as f64)
}
