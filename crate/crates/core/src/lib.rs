//! Statistical off-policy inference with fitted Q-evaluation.
//!
//! The crate covers episodic MDP environments and oracles ([`mdp`]), linear
//! feature maps ([`features`]), fitted Q-evaluation and its plug-in form
//! ([`fqe`]), episode-level resampling ([`bootstrap`]) and downstream
//! estimators such as percentile confidence intervals ([`inference`]).

pub mod bootstrap;
pub mod error;
pub mod features;
pub mod fqe;
pub mod inference;
pub mod mdp;
pub mod rng;

pub use error::{FqeError, Result};
