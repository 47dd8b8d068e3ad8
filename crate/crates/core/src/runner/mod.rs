//! Training runs end to end: configuration, the model, checkpoints and reports.

mod checkpoint;
mod config;
mod gradcheck;
mod model;
mod report;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{DataSpec, ExperimentConfig, Task};
pub use gradcheck::{gradcheck, gradcheck_with, gradcheck_with_hook, FdRule, GradcheckReport, GradcheckSpec, GRADCHECK_TOLERANCE};
pub use model::{evaluate, BatchInputs, BatchOutcome, Model, ModelGrads, EVAL_CHUNK};
pub use report::{
    curves_svg, emit_curves_svg, emit_metrics_csv, format_sig6, metrics_csv, params_table, CSV_HEADER,
};
pub use train::{
    initial_state, load_datasets, load_for_checkpoint, load_split, train, train_on, write_run_outputs,
    Datasets, MetricsRecord, TrainOutcome, CHECKPOINT_FILE, CURVES_FILE, METRICS_FILE,
};
