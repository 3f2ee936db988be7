//! Penalized Q-learning for multi-stage dynamic treatment regimes.

pub mod bootstrapstudy;
pub mod error;
pub mod estimators;
pub mod inference;
mod linalg;
pub mod model;
pub mod multistage;
pub mod penalty;
pub mod pipeline;
pub mod rng;
pub mod simstudy;

pub use error::{Error, Result};
pub use linalg::{asymmetry, min_eigenvalue, MAX_CONDITION};
