//! Two-stage multitask scheduling.
//!
//! Stage 1 trains on MSA, ER and FER; stage 2 on MSA, ER, ERI and ECPE.
//! Each stage assigns records to tasks by sampling rate under a fixed
//! seed, producing a reproducible stream of training items.

mod identifier;
mod plan;
mod stream;

use crate::labels::TaskKind;

pub use identifier::{attach_identifier, TaskIdentifierMap};
pub use plan::{
    allowed_tasks, default_plans, verify_plan, Ablation, Budget, PlanOverride, Provenance,
    ResolvedPlan, ScheduleConfig, StagePlan, RATE_TOLERANCE, STAGE1_BUDGET,
};
pub use stream::{
    assign_stream, largest_remainder_quotas, remaining_pool, stream_task_counts, SamplingMode,
    TrainingItem,
};

#[derive(Debug, thiserror::Error)]
pub enum SchedulerError {
    #[error("invalid stage plan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),
    #[error("no records available for planned task(s): {}", .0.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", "))]
    Shortage(Vec<TaskKind>),
    #[error("no task identifier registered for {0}")]
    UnknownTask(TaskKind),
    #[error("task identifier map is not one-to-one: {0}")]
    NotBijective(String),
}
