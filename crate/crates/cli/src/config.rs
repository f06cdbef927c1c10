//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use coadapt_core::agents::{
    BackupSelector, Dr3Config, Dr3Variant, ErrorLoss, LossHead, NoiseKind, OptimizerKind, TrainConfig,
};
use coadapt_core::envdata::{GridPreset, GridSpec, ObservationKind, ObservationMap};
use coadapt_core::numerics::HeadMode;
use coadapt_core::{Error, Result};

/// Ordered `key = value` entries. Later documents override earlier ones on merge.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(i + 1, format!("expected 'key = value', found '{line}'")));
            };
            let key = k.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-')
            {
                return Err(Error::parse(i + 1, format!("invalid key '{key}'")));
            }
            if doc.get(key).is_some() {
                return Err(Error::parse(i + 1, format!("key '{key}' set twice")));
            }
            doc.entries.push((key.to_string(), v.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn merge(&mut self, other: &KvDoc) {
        for (k, v) in &other.entries {
            self.set(k, v.clone());
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Applies a `key=value` override given on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let parsed = KvDoc::parse(assignment)?;
        if parsed.entries.len() != 1 {
            return Err(Error::config(format!("override '{assignment}' is not a single key=value")));
        }
        self.merge(&parsed);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            writeln!(out, "{k} = {v}").expect("writing to a String");
        }
        out
    }
}

/// Every key an experiment document may contain.
pub const KNOWN_KEYS: &[&str] = &[
    "name",
    "description",
    "seeds",
    "env.grid",
    "env.obstacle_seed",
    "env.layout",
    "env.gamma",
    "obs.kind",
    "obs.dim",
    "obs.seed",
    "obs.radius",
    "data.transitions",
    "data.p_opt",
    "data.max_episode_len",
    "data.file",
    "train.selector",
    "train.loss",
    "train.cql_alpha",
    "train.rem_heads",
    "train.rem_loss",
    "train.huber_delta",
    "train.dr3",
    "train.dr3_coef",
    "train.dr3_lyapunov_iters",
    "train.dr3_lyapunov_lr",
    "train.optimizer",
    "train.lr",
    "train.batch_size",
    "train.target_period",
    "train.total_steps",
    "train.eval_every",
    "train.eval_episodes",
    "train.eval_max_len",
    "train.head_mode",
    "train.hidden",
    "train.srank_delta",
    "train.noise",
    "train.noise_scale",
    "sweep.key",
    "sweep.values",
];

#[derive(Clone, Debug, PartialEq)]
pub enum GridChoice {
    Sparse,
    Obstacles { seed: u64 },
    Custom { rows: Vec<String> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub transitions: usize,
    pub p_opt: f64,
    pub max_episode_len: usize,
    /// Existing dataset used instead of collecting one per seed.
    pub file: Option<PathBuf>,
}

/// One axis of variants; each value overrides `key`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub name: String,
    pub grid: GridChoice,
    pub gamma: f64,
    pub obs_kind: ObservationKind,
    pub obs_dim: usize,
    pub obs_seed: u64,
    pub obs_radius: usize,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub noise: Option<NoiseKind>,
    pub sweep: Option<Sweep>,
    pub seeds: Vec<u64>,
    doc: KvDoc,
}

fn required<'a>(doc: &'a KvDoc, key: &str) -> Result<&'a str> {
    doc.get(key).ok_or_else(|| Error::config(format!("missing key '{key}'")))
}

fn num<T: std::str::FromStr>(doc: &KvDoc, key: &str) -> Result<T> {
    let v = required(doc, key)?;
    v.parse()
        .map_err(|_| Error::config(format!("{key} = '{v}' is not a valid number")))
}

pub fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn num_list<T: std::str::FromStr>(doc: &KvDoc, key: &str) -> Result<Vec<T>> {
    list(required(doc, key)?)
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::config(format!("{key}: '{s}' is not a valid number")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_doc(doc: &KvDoc) -> Result<Self> {
        for (k, _) in doc.entries() {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(Error::config(format!("unknown key '{k}'")));
            }
        }
        let grid = match required(doc, "env.grid")? {
            "grid16-sparse" => GridChoice::Sparse,
            "grid16-obstacles" => GridChoice::Obstacles {
                seed: num(doc, "env.obstacle_seed")?,
            },
            "custom" => GridChoice::Custom {
                rows: required(doc, "env.layout")?.split('/').map(String::from).collect(),
            },
            other => return Err(Error::config(format!("unknown env.grid '{other}'"))),
        };
        let obs_kind = ObservationKind::parse(required(doc, "obs.kind")?)?;
        let loss_head = match required(doc, "train.loss")? {
            "td" => LossHead::PlainTD,
            "cql" => LossHead::Cql {
                alpha: num(doc, "train.cql_alpha")?,
            },
            "rem" => LossHead::Rem {
                heads: num(doc, "train.rem_heads")?,
                loss: match required(doc, "train.rem_loss")? {
                    "huber" => ErrorLoss::Huber {
                        delta: num(doc, "train.huber_delta")?,
                    },
                    "squared" => ErrorLoss::Squared,
                    other => return Err(Error::config(format!("unknown train.rem_loss '{other}'"))),
                },
            },
            other => return Err(Error::config(format!("unknown train.loss '{other}'"))),
        };
        let coefficient: f64 = num(doc, "train.dr3_coef")?;
        let variant = Dr3Variant::parse(required(doc, "train.dr3")?)?;
        let dr3 = if coefficient == 0.0 {
            Dr3Config::off()
        } else if variant == Dr3Variant::Off {
            return Err(Error::config("train.dr3 = off but train.dr3_coef is nonzero"));
        } else {
            Dr3Config {
                variant,
                coefficient,
                lyapunov_iters: num(doc, "train.dr3_lyapunov_iters")?,
                lyapunov_lr: num(doc, "train.dr3_lyapunov_lr")?,
            }
        };
        let head_mode = HeadMode::parse(required(doc, "train.head_mode")?)
            .ok_or_else(|| Error::config(format!("unknown train.head_mode '{}'", doc.get("train.head_mode").unwrap_or(""))))?;
        let gamma: f64 = num(doc, "env.gamma")?;
        let train = TrainConfig {
            selector: BackupSelector::parse(required(doc, "train.selector")?)?,
            loss_head,
            dr3,
            gamma,
            lr: num(doc, "train.lr")?,
            optimizer: OptimizerKind::parse(required(doc, "train.optimizer")?)?,
            batch_size: num(doc, "train.batch_size")?,
            target_period: num(doc, "train.target_period")?,
            total_steps: num(doc, "train.total_steps")?,
            eval_every: num(doc, "train.eval_every")?,
            eval_episodes: num(doc, "train.eval_episodes")?,
            eval_max_len: num(doc, "train.eval_max_len")?,
            seed: 0,
            head_mode,
            hidden: num_list(doc, "train.hidden")?,
            srank_delta: num(doc, "train.srank_delta")?,
        };
        train.validate()?;
        let noise = match required(doc, "train.noise")? {
            "off" => None,
            "isotropic" => Some(NoiseKind::Isotropic {
                scale: num(doc, "train.noise_scale")?,
            }),
            "label" => Some(NoiseKind::LabelNoiseTargets {
                scale: num(doc, "train.noise_scale")?,
            }),
            other => return Err(Error::config(format!("unknown train.noise '{other}'"))),
        };
        if noise.is_some() && loss_head != LossHead::PlainTD {
            return Err(Error::config("noisy runs use train.loss = td"));
        }
        let sweep = match (doc.get("sweep.key"), doc.get("sweep.values")) {
            (None, None) => None,
            (Some(key), Some(values)) => {
                if !KNOWN_KEYS.contains(&key) || key.starts_with("sweep.") || key == "seeds" {
                    return Err(Error::config(format!("sweep.key '{key}' cannot be swept")));
                }
                let values = list(values);
                if values.is_empty() {
                    return Err(Error::config("sweep.values is empty"));
                }
                Some(Sweep {
                    key: key.to_string(),
                    values,
                })
            }
            _ => return Err(Error::config("sweep.key and sweep.values go together")),
        };
        let seeds: Vec<u64> = num_list(doc, "seeds")?;
        if seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        let data = DataConfig {
            transitions: num(doc, "data.transitions")?,
            p_opt: num(doc, "data.p_opt")?,
            max_episode_len: num(doc, "data.max_episode_len")?,
            file: doc.get("data.file").filter(|s| !s.is_empty()).map(PathBuf::from),
        };
        if data.transitions == 0 || data.max_episode_len == 0 {
            return Err(Error::config("data.transitions and data.max_episode_len must be positive"));
        }
        let cfg = ExperimentConfig {
            name: required(doc, "name")?.to_string(),
            grid,
            gamma,
            obs_kind,
            obs_dim: num(doc, "obs.dim")?,
            obs_seed: num(doc, "obs.seed")?,
            obs_radius: num(doc, "obs.radius")?,
            data,
            train,
            noise,
            sweep,
            seeds,
            doc: doc.clone(),
        };
        // building these validates the remaining fields
        cfg.grid_spec()?;
        cfg.observation_map()?;
        Ok(cfg)
    }

    pub fn doc(&self) -> &KvDoc {
        &self.doc
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let preset = match &self.grid {
            GridChoice::Sparse => GridPreset::Grid16Sparse,
            GridChoice::Obstacles { seed } => GridPreset::Grid16Obstacles { seed: *seed },
            GridChoice::Custom { rows } => {
                let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
                GridPreset::Custom(GridSpec::from_ascii("custom", &rows, self.gamma)?)
            }
        };
        coadapt_core::envdata::build_grid(&preset, self.gamma)
    }

    pub fn observation_map(&self) -> Result<ObservationMap> {
        ObservationMap::new(self.obs_kind, self.obs_dim, self.obs_seed, self.obs_radius)
    }

    /// `(label, config)` for every sweep value, or the config itself.
    pub fn variants(&self) -> Result<Vec<(String, ExperimentConfig)>> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![(self.name.clone(), self.clone())]);
        };
        let short = sweep.key.rsplit('.').next().unwrap_or(&sweep.key);
        sweep
            .values
            .iter()
            .map(|v| {
                let mut doc = self.doc.clone();
                doc.set(&sweep.key, v.clone());
                let label = if sweep.key == "train.selector" {
                    v.clone()
                } else {
                    format!("{short}={v}")
                };
                let mut cfg = ExperimentConfig::from_doc(&doc)?;
                cfg.sweep = None;
                Ok((label, cfg))
            })
            .collect()
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        self.doc.set(
            "seeds",
            seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        self.seeds = seeds;
        Ok(self)
    }

    /// Provenance pairs embedding the whole document.
    pub fn provenance(&self) -> Vec<(String, String)> {
        self.doc.entries().to_vec()
    }
}
