//! Experiment harness for bootstrapped fitted Q-evaluation.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod setup;

pub use config::ExperimentConfig;
pub use error::{ExpError, ExpResult};
