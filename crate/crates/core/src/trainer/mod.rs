//! Pretraining, downstream protocols, checkpoints and run logs.

mod checkpoint;
mod config;
mod downstream;
mod runlog;
mod pretrain;

pub use checkpoint::{params_digest, Checkpoint};
pub use config::{DownstreamConfig, DownstreamMode, PretrainConfig};
pub use downstream::{attach_probe_and_train, predict_logits, representations, DownstreamRun};
pub use runlog::{log_csv, EpochSummary, LogRow, LOG_HEADER};
pub use pretrain::{pretrain, PretrainRun, Pretrainer, StepOutcome};
