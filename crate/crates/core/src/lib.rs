//! Simulation core for temporal alignment in asynchronous agent environments.
//!
//! An agent issues a command whose completion time is hidden and Gamma
//! distributed. It may only sleep or check for completion, and is scored by
//! how many checks it needed and how far past completion it confirmed:
//!
//! ```text
//! regret = n_check · exp((t_confirm − t_true) / t_true)
//! ```
//!
//! Episodes repeat, and each new episode sees a digest of the earlier ones.

pub mod barrier;
pub mod config;
pub mod env;
pub mod exec;
pub mod latency;
pub mod policy;
pub mod report;
pub mod runner;

pub use env::{ClockConfig, ClockMode, EpisodeRecord, EpisodeState, Move, MoveEntry, Observation};
pub use exec::Execution;
pub use latency::{default_actions, gamma_pdf, ActionSpec, LatencySampler};
pub use policy::{HistorySummary, Policy, PolicyContext, PolicySpec, ReferencePolicy};
pub use runner::{regret, run_experiment, ExperimentConfig, RunResult};
