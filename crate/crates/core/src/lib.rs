//! Reproducing, measuring and counteracting feature co-adaptation in
//! offline temporal-difference learning on small gridworld MDPs.

pub mod agents;
pub mod analysis;
pub mod envdata;
pub mod error;
pub mod numerics;
pub mod stats;

pub use error::{Error, Result};
