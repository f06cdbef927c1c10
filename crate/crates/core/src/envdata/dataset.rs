//! Offline datasets: collection, Monte-Carlo returns, and the text file format.
//!
//! File layout: a metadata line `# coadapt-dataset key=value ...`, then one line
//! per transition:
//! `state,action,reward,next_state,next_action,terminal,obs...,next_obs...`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grid::{GridSpec, NUM_ACTIONS};
use super::observation::{ObservationKind, ObservationMap};
use super::policy::StochasticPolicy;
use crate::error::{Error, Result};

const MAGIC: &str = "# coadapt-dataset";

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub next_obs: Vec<f64>,
    pub next_action: usize,
    pub terminal: bool,
}

/// Provenance for a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub env_id: String,
    /// Grid rows joined by `/`, start marked `S`.
    pub layout: String,
    pub gamma: f64,
    pub policy: String,
    pub seed: u64,
    pub max_episode_len: usize,
    pub obs_kind: ObservationKind,
    pub obs_dim: usize,
    pub obs_seed: u64,
    pub obs_radius: usize,
}

impl DatasetMeta {
    pub fn grid(&self) -> Result<GridSpec> {
        let rows: Vec<&str> = self.layout.split('/').collect();
        GridSpec::from_ascii(&self.env_id, &rows, self.gamma)
    }

    pub fn observation_map(&self) -> Result<ObservationMap> {
        ObservationMap::new(self.obs_kind, self.obs_dim, self.obs_seed, self.obs_radius)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    transitions: Vec<Transition>,
    episode_starts: Vec<usize>,
    meta: DatasetMeta,
}

impl OfflineDataset {
    pub fn new(transitions: Vec<Transition>, episode_starts: Vec<usize>, meta: DatasetMeta) -> Result<Self> {
        if !transitions.is_empty() && episode_starts.first() != Some(&0) {
            return Err(Error::domain("episode boundaries must start at 0"));
        }
        if episode_starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("episode boundaries must be strictly increasing"));
        }
        if episode_starts.last().is_some_and(|&b| b >= transitions.len()) {
            return Err(Error::domain("episode boundary past the end of the dataset"));
        }
        if let Some(first) = transitions.first() {
            let (d, dn) = (first.obs.len(), first.next_obs.len());
            for (i, t) in transitions.iter().enumerate() {
                if t.obs.len() != d || t.next_obs.len() != dn || d != dn {
                    return Err(Error::shape(format!("transition {i} has inconsistent observation length")));
                }
                if t.action >= NUM_ACTIONS || t.next_action >= NUM_ACTIONS {
                    return Err(Error::domain(format!("transition {i} has an action out of range")));
                }
            }
        }
        Ok(OfflineDataset {
            transitions,
            episode_starts,
            meta,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn episode_starts(&self) -> &[usize] {
        &self.episode_starts
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn gamma(&self) -> f64 {
        self.meta.gamma
    }

    pub fn obs_dim(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.obs.len())
    }

    /// Half-open index ranges of each trajectory.
    pub fn episodes(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.episode_starts.len());
        for (k, &b) in self.episode_starts.iter().enumerate() {
            let end = self.episode_starts.get(k + 1).copied().unwrap_or(self.transitions.len());
            out.push(b..end);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let starts: Vec<String> = self.episode_starts.iter().map(|b| b.to_string()).collect();
        let mut out = format!(
            "{MAGIC} env={} layout={} gamma={} policy={} seed={} max_episode_len={} obs_kind={} obs_dim={} obs_seed={} obs_radius={} transitions={} episode_starts={}\n",
            m.env_id,
            m.layout,
            m.gamma,
            m.policy,
            m.seed,
            m.max_episode_len,
            m.obs_kind.name(),
            m.obs_dim,
            m.obs_seed,
            m.obs_radius,
            self.transitions.len(),
            starts.join(";"),
        );
        for t in &self.transitions {
            write!(
                out,
                "{},{},{},{},{},{}",
                t.state,
                t.action,
                t.reward,
                t.next_state,
                t.next_action,
                u8::from(t.terminal)
            )
            .expect("writing to a String");
            for v in t.obs.iter().chain(&t.next_obs) {
                write!(out, ",{v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty dataset file"))?;
        let rest = header
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::parse(1, "missing dataset metadata line"))?;
        let mut fields = std::collections::HashMap::new();
        for tok in rest.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(1, format!("malformed metadata field '{tok}'")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(1, format!("metadata lacks '{k}'")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::parse(1, format!("metadata '{k}' is not an integer")))
        };
        let meta = DatasetMeta {
            env_id: get("env")?.to_string(),
            layout: get("layout")?.to_string(),
            gamma: get("gamma")?
                .parse()
                .map_err(|_| Error::parse(1, "metadata 'gamma' is not a number"))?,
            policy: get("policy")?.to_string(),
            seed: num("seed")?,
            max_episode_len: num("max_episode_len")? as usize,
            obs_kind: ObservationKind::parse(get("obs_kind")?).map_err(|e| Error::parse(1, e.to_string()))?,
            obs_dim: num("obs_dim")? as usize,
            obs_seed: num("obs_seed")?,
            obs_radius: num("obs_radius")? as usize,
        };
        let expected = num("transitions")? as usize;
        let starts_field = get("episode_starts")?;
        let episode_starts = if starts_field.is_empty() {
            Vec::new()
        } else {
            starts_field
                .split(';')
                .map(|b| b.parse().map_err(|_| Error::parse(1, format!("bad episode boundary '{b}'"))))
                .collect::<Result<Vec<usize>>>()?
        };

        let mut transitions = Vec::with_capacity(expected);
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            transitions.push(parse_transition(line, lineno)?);
        }
        if transitions.len() != expected {
            return Err(Error::parse(
                1,
                format!("metadata declares {expected} transitions, found {}", transitions.len()),
            ));
        }
        OfflineDataset::new(transitions, episode_starts, meta)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        OfflineDataset::parse(&text)
    }
}

fn parse_transition(line: &str, lineno: usize) -> Result<Transition> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() < 6 || (parts.len() - 6) % 2 != 0 {
        return Err(Error::parse(lineno, format!("expected 6 + 2d fields, found {}", parts.len())));
    }
    let int = |k: usize| -> Result<usize> {
        parts[k]
            .trim()
            .parse()
            .map_err(|_| Error::parse(lineno, format!("field {} '{}' is not an integer", k + 1, parts[k])))
    };
    let float = |k: usize| -> Result<f64> {
        let v: f64 = parts[k]
            .trim()
            .parse()
            .map_err(|_| Error::parse(lineno, format!("field {} '{}' is not a number", k + 1, parts[k])))?;
        if !v.is_finite() {
            return Err(Error::parse(lineno, format!("field {} is not finite", k + 1)));
        }
        Ok(v)
    };
    let terminal = match parts[5].trim() {
        "0" => false,
        "1" => true,
        other => return Err(Error::parse(lineno, format!("terminal flag '{other}' is not 0/1"))),
    };
    let d = (parts.len() - 6) / 2;
    let obs = (6..6 + d).map(float).collect::<Result<Vec<_>>>()?;
    let next_obs = (6 + d..6 + 2 * d).map(float).collect::<Result<Vec<_>>>()?;
    Ok(Transition {
        state: int(0)?,
        action: int(1)?,
        reward: float(2)?,
        next_state: int(3)?,
        next_action: int(4)?,
        terminal,
        obs,
        next_obs,
    })
}

/// Rows of the grid joined by `/` with the start cell marked `S`.
pub fn layout_string(spec: &GridSpec) -> String {
    spec.to_string().trim_end().replace('\n', "/")
}

/// Rolls out episodes from the start cell until `n_transitions` are logged.
///
/// An episode ends on a terminal transition or after `max_episode_len` steps.
/// `next_action` is drawn from the policy at `next_state` and becomes the next
/// logged action when the episode continues.
pub fn collect_dataset(
    spec: &GridSpec,
    obs_map: &ObservationMap,
    policy: &StochasticPolicy,
    n_transitions: usize,
    max_episode_len: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n_transitions == 0 {
        return Err(Error::domain("dataset must hold at least one transition"));
    }
    if max_episode_len == 0 {
        return Err(Error::domain("episode cap must be positive"));
    }
    if policy.num_states() != spec.num_states() {
        return Err(Error::shape("policy and grid disagree on the number of states"));
    }
    let observations = obs_map.observe_all(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n_transitions);
    let mut episode_starts = Vec::new();

    let mut state = spec.start_state();
    let mut action = policy.sample(state, &mut rng);
    let mut t_in_episode = 0;
    episode_starts.push(0);
    while transitions.len() < n_transitions {
        let out = spec.step(state, action)?;
        let next_action = policy.sample(out.next_state, &mut rng);
        transitions.push(Transition {
            state,
            obs: observations[state].clone(),
            action,
            reward: out.reward,
            next_state: out.next_state,
            next_obs: observations[out.next_state].clone(),
            next_action,
            terminal: out.terminal,
        });
        t_in_episode += 1;
        if out.terminal || t_in_episode >= max_episode_len {
            if transitions.len() < n_transitions {
                episode_starts.push(transitions.len());
            }
            state = spec.start_state();
            action = policy.sample(state, &mut rng);
            t_in_episode = 0;
        } else {
            state = out.next_state;
            action = next_action;
        }
    }
    let meta = DatasetMeta {
        env_id: spec.name().to_string(),
        layout: layout_string(spec),
        gamma: spec.gamma(),
        policy: policy.description().to_string(),
        seed,
        max_episode_len,
        obs_kind: obs_map.kind(),
        obs_dim: obs_map.dim(),
        obs_seed: obs_map.seed(),
        obs_radius: obs_map.radius(),
    };
    OfflineDataset::new(transitions, episode_starts, meta)
}

/// Discounted return-to-go within each trajectory, truncated at its boundary.
pub fn mc_returns(dataset: &OfflineDataset) -> Vec<f64> {
    let gamma = dataset.gamma();
    let mut out = vec![0.0; dataset.len()];
    for ep in dataset.episodes() {
        let mut g = 0.0;
        for i in ep.rev() {
            g = dataset.transitions[i].reward + gamma * g;
            out[i] = g;
        }
    }
    out
}
