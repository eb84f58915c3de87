//! Training loops, offline evaluation phases, score logging and the
//! best-eval / re-eval reporting protocols.

mod eval;
mod run;
mod scores;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::agents::AgentError;
use crate::envs::EnvError;

pub use eval::{
    report_best_eval, report_re_eval, run_evaluation_phase, EvalConfig, EvalPolicy, EvaluationRecord, PhaseBudget,
    Reporting,
};
pub use run::{algorithm_config, preset, run, RunConfig, RunOutcome, ALGORITHMS, PRESETS};
pub use scores::{read_scores, write_scores, ScoreLog, ScoreRow, EPISODES_FILE, SCORES_FILE, SCORES_HEADER};
pub use train::{
    train_agent_batch_with_evaluation, train_agent_with_evaluation, StopCondition, TrainOptions, TrainResult,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no checkpoint for the best evaluation (expected at {0:?})")]
    MissingCheckpoint(Option<PathBuf>),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
}
