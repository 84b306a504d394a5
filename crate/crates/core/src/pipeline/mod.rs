//! Training and evaluation: delay-domain processing, the NMSE objective,
//! the training loop, grouped evaluation and CSV reports.

mod domain;
mod eval;
mod report;
mod train;

pub use domain::{nmse, postprocess, preprocess, to_db, to_delay_domain, Context};
pub use eval::{evaluate, ls_baseline, mean_nmse, zero_shot_eval, EvalReport, EvalRow, RoutingTrace, UsageRow};
pub use report::{
    read_eval_csv, read_history_csv, read_trace_csv, read_usage_csv, write_eval_csv, write_history_csv,
    write_trace_csv, write_usage_csv,
};
pub use train::{train, EpochRecord, History, TrainConfig};
