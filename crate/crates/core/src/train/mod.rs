//! Optimizers, learning-rate schedule, run configuration, the training
//! loop and the initialization ablation.

pub mod ablation;
pub mod config;
pub mod optim;
pub mod run;
pub mod schedule;

pub use ablation::{run_ablation, AblationReport, ArmSummary};
pub use config::{DataSource, RunConfig, CONFIG_HEADER};
pub use optim::{
    adamw_step, clip_grad_norm, optimizer_step, sgd_step, OptimKind, OptimSpec, OptimState,
};
pub use run::{
    evaluate, prepare_data, train_run, EpochRow, RunReport, RunStatus, EPOCH_CSV_HEADER,
};
pub use schedule::{lr_at, ScheduleSpec};
