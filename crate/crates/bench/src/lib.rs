//! Toy-scale experiment bench: method comparison, continuation, schedule
//! extraction, sensitivity, scalability and the opponent-strategy ablation.
//!
//! Every run drives an in-process controller with a simulated worker pool,
//! so results depend only on the plan and its seeds.

pub mod experiments;
pub mod metrics;
pub mod oracle;
pub mod plan;
pub mod run;
pub mod suite;

pub use plan::{ExperimentPlan, LrSpace, Method, PlanError};
pub use run::{execute, BenchError, RunResult};
pub use suite::{run_suite, write_csvs, Suite};
