//! Experiment orchestration: configuration, the actor/learner training loop,
//! greedy evaluation, one-knob sweeps and scheduler comparison.

mod bench;
mod compare;
mod config;
mod eval;
pub mod presets;
mod train;

pub use bench::{bench_base, bench_sweep, BenchRow, Knob};
pub use compare::{compare, CompareReport, CompareRow};
pub use config::{BenchConfig, ExperimentConfig, SchedulerKind, TrainingConfig};
pub use eval::{evaluate, evaluate_scheduler, evaluate_scheduler_seeded, run_scheduler, summarize_episodes, DdpgPolicy, EvalSummary};
pub use train::{make_scheduler, train, EvalRecord, ReplayStatsRow, RunMetrics, TrainOutcome};
