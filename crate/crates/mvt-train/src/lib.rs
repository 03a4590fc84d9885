//! Training (AdamW + cross-entropy), evaluation, and the ablation and
//! benchmark harness for the multi-view model.

pub mod cpu;
pub mod error;
pub mod harness;
pub mod optim;
pub mod trainer;

pub use error::{Result, TrainError};
pub use harness::{
    bench, desk_block_grid, run_sweep, subsample_views, BenchReport, SweepAxis, SweepCell,
    SweepResult, SweepSpec, SUMMARY_HEADER, SWEEP_HEADER,
};
pub use optim::{decay_applies, AdamW, TrainConfig};
pub use trainer::{
    argmax_lowest, evaluate, train, train_typed, views_to_tensors, EvalReport, Metrics,
    TimingMode, TrainOutcome, METRICS_HEADER,
};
