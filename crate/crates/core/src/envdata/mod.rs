//! Gridworld MDPs, observation maps, behavior policies and offline datasets.

pub mod dataset;
pub mod evaluate;
pub mod grid;
pub mod observation;
pub mod policy;

pub use dataset::{collect_dataset, layout_string, mc_returns, DatasetMeta, OfflineDataset, Transition};
pub use evaluate::{evaluate_policy, greedy_action, QFunction};
pub use grid::{build_grid, value_iteration, Action, CellKind, GridPreset, GridSpec, QTable, StepOutcome, NUM_ACTIONS};
pub use observation::{ObservationKind, ObservationMap, DEFAULT_OBS_DIM};
pub use policy::{make_behavior_policy, StochasticPolicy};
