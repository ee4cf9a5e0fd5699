//! A safety layer for constrained reinforcement learning built on a
//! reduced-order MDP, together with PPO / PPO-Lagrangian baselines and
//! small continuous-control environments with binary safety costs.
//!
//! The pieces fit together as follows:
//!
//! - [`env`] provides the environments and the rollout data model.
//! - [`dimred`] compresses observed states to 2-D (exact t-SNE) and trains
//!   a mapper network so unseen states can be embedded too.
//! - [`romdp`] clusters the embedded states with a Gaussian mixture,
//!   discretizes actions on a grid, and builds the reduced cost /
//!   transition / policy tables from counts.
//! - [`planner`] runs averaged value iteration on the reduced model to get
//!   the cost-to-go of the current behavior.
//! - [`safety`] corrects each proposed action by a proximity search under
//!   the reduced-model cost constraints (particle swarm plus a cell-aware
//!   refinement), with a hysteresis rule that switches the layer off once
//!   the learned cost critic becomes reliable.
//! - [`srl`] implements PPO and PPO-Lagrangian with generalized advantage
//!   estimation on the hand-rolled networks from [`net`].
//! - [`harness`] wires everything into the epoch loop, metrics files and
//!   the CLI commands.

pub mod config;
pub mod dimred;
pub mod env;
pub mod harness;
pub mod net;
pub mod planner;
pub mod rng;
pub mod romdp;
pub mod safety;
pub mod srl;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} contains a non-finite value")]
    NonFinite { what: &'static str },

    #[error("{what} is empty")]
    Empty { what: &'static str },

    #[error("{what}: need at least {need}, got {got}")]
    TooFew {
        what: &'static str,
        need: usize,
        got: usize,
    },

    #[error("length mismatch: {left_name} has {left}, {right_name} has {right}")]
    LengthMismatch {
        left_name: &'static str,
        left: usize,
        right_name: &'static str,
        right: usize,
    },

    #[error("degenerate input: {why}")]
    Degenerate { why: String },

    #[error(
        "perplexity {perplexity} infeasible for {count} points (need count >= 4 * perplexity)"
    )]
    PerplexityRange { perplexity: f64, count: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("did not converge within {iterations} iterations (last delta {last_delta})")]
    NotConverged {
        iterations: usize,
        last_delta: f64,
        /// Best values found so far, for callers that want to inspect them.
        last_values: Vec<f64>,
    },

    #[error("unsupported schema version: expected {expected}, got {got}")]
    SchemaVersion { expected: String, got: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
