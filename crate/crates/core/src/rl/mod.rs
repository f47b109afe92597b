//! Q-network training with a deterministic exploration policy.

mod agent;
mod features;
mod replay;
mod train;

pub use agent::AgentBundle;
pub use features::{action_maps, denormalize_action, normalize_action, ActionMap, FeatureSpec};
pub use replay::{ReplayBuffer, Transition};
pub use train::{feature_spec_for, save_curves, train, write_curves, EpisodeStats, TrainConfig, TrainOutcome};

use crate::env::EnvError;
use crate::neural::NeuralError;

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
