//! Training, evaluation, ablation grids and attention export.

mod ablation;
mod config;
mod export;
mod run;
mod sgd;

pub use ablation::{ablation_grid, format_table, AblationAxis, CellResult};
pub use config::{DataSource, Schedule, TrainConfig};
pub use export::{attention_images, export_attention, parse_pgm, write_pgm, AttentionImage};
pub use run::{append_record, evaluate, log_path, sgd_step, train, train_with, EpochRecord, RunRecord, StepStats, TrainData, Trainer};
pub use sgd::Sgd;
