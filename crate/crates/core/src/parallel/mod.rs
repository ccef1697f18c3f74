//! Mini-batch, epoch and memory parallelism: planning, schedules, weight
//! synchronization and the threaded engine.

pub mod engine;
pub mod planner;
pub mod schedule;
pub mod sync;

pub use engine::{run_parallel, run_sequential, Prepared, RunOutput};
pub use planner::{plan_config, TrainConfig};
pub use schedule::{
    build_assignment, format_assignment, schedule_epoch, schedule_memory, schedule_minibatch, segments,
    traversal_budget, AssignmentEntry, GroupSchedule, Position, Role,
};
pub use sync::{average_gradients, replicas_identical};
