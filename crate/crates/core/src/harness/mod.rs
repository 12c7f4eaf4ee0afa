//! Experiment orchestration: seeded training runs, deterministic
//! evaluation, the prior-width sweep, first-episode reports and policy
//! traces. Every written file is a function of the config and seed alone.

mod config;
mod experiments;
mod output;
mod rollout;
mod training;

use std::path::{Path, PathBuf};

pub use config::{EvalConfig, ExperimentConfig};
pub use experiments::{
    emit_policy_trace, eval_seeds, evaluate_policy, expert_policy, first_episode_report, run_evaluation, run_training,
    sigma_sweep, summarize_eval, sweep_rows, train_seed, EvalRow, EvalSummaryRow, FirstEpisodeRow, SweepRow, TraceRow,
    DEFAULT_SIGMAS,
};
pub use output::{read_csv, run_dir, write_csv, write_json};
pub use rollout::{derive_seed, route_key, run_episode, streams, EpisodeSeeds, Policy, StepData};
pub use training::{
    termination_name, training_seeds, Checkpoint, EpisodeRow, LossRow, RunRecord, Trainer, CHECKPOINT_VERSION,
};

use crate::drivesim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config could not be parsed: {0}")]
    ConfigParse(String),
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("held-out route `{0}` may not appear in a training config")]
    HeldOutRoute(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged (seed {seed}, episode {episode}): {detail}")]
    Diverged { seed: u64, episode: usize, detail: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}
