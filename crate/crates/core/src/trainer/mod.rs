//! The per-trainer loop: reversed-order steps, loss, evaluation, metrics.

pub mod config;
pub mod eval;
pub mod loss;
pub mod metrics;
pub mod step;

pub use config::{PlannerInputs, RunConfig};
pub use eval::{evaluate_mrr, random_mrr, reciprocal_rank, replay_memory, EvalOptions, EvalResult};
pub use loss::{bce_loss, BceOutput};
pub use metrics::{metrics_csv, write_metrics, IterationRecord, MetricsRow};
pub use step::{batch_nodes, memory_step, train_step, IterationResult, StepOutput};

use crate::error::Result;
use crate::nn::ModelParams;
use crate::parallel::engine::{run_parallel, run_sequential, Prepared, RunOutput};
use crate::rng::mix_seed;
use crate::tgraph::TemporalGraph;

/// Initial parameters for a run; identical on every trainer.
pub fn init_params(cfg: &RunConfig, g: &TemporalGraph) -> ModelParams {
    ModelParams::init(cfg.dims(g), g.max_t(), mix_seed(cfg.train.seed, 0x696e_6974))
}

/// Trains with the configured `(i, j, k)` through the memory daemons.
pub fn run_training(cfg: &RunConfig, g: &TemporalGraph) -> Result<RunOutput> {
    let prep = Prepared::new(cfg, g)?;
    run_parallel(&prep, &init_params(cfg, g))
}

/// Single-threaded, daemon-free reference for `(1, 1, 1)`.
pub fn run_reference(cfg: &RunConfig, g: &TemporalGraph) -> Result<RunOutput> {
    let prep = Prepared::new(cfg, g)?;
    run_sequential(&prep, &init_params(cfg, g))
}
