//! Experiment orchestration: the shift study (frozen BN, ONDA checkpoints and
//! DIAL on every source/target pair), the α and `n_t` ablations, summaries and
//! on-disk reports.

mod ablation;
mod config;
pub mod io;
pub mod metrics;
mod report;
mod study;

pub use ablation::{run_ablation, AblationRequest, AblationResult, SweepCurve, SweepParam};
pub use config::{AblationConfig, ExperimentConfig};
pub use report::{summarize, ShiftSummary, SourceSummary, Summary, TargetSummary};
pub use study::{
    run_shift_study, shuffled_stream, train_source, CellProvenance, Method, ResultRow, StudyOutput,
};
