mod buffer;
mod config;
mod eval;
mod gae;
mod ppo;
mod trainer;

pub use buffer::RolloutBuffer;
pub use config::{AnalysisConfig, RunConfig, TrainConfig};
pub use eval::{analysis_batch, evaluate, EvalReport};
pub use gae::{adapt_lr, compute_gae, normalize_advantages, MAX_LR, MIN_LR};
pub use ppo::{
    ppo_gradients, ppo_loss, ppo_update, Gradients, LossBreakdown, LossCoefficients, Minibatch, UpdateMetrics,
};
pub use trainer::{
    effective_lambda, nan_mean, train, ConnectionRecord, IterationMetrics, PostTraining, TrainOutcome, Trainer,
    EVAL_SEED_OFFSET,
};
