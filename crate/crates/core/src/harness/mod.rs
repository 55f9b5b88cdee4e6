//! Training, evaluation, checkpoints and run configuration.

mod checkpoint;
mod config;
mod eval;
mod optim;
mod study;
mod train;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{Config, TrainConfig};
pub use eval::{
    ablate_steps, ablation_csv, evaluate, evaluate_checkpoint, find_checkpoints, parse_grid, predict_scene, AblationRow,
    EvalReport,
};
pub use optim::{clip_grad_norm, one_cycle_lr, AdamW};
pub use study::{uncertainty_study, UncertaintyStudy};
pub use train::{checkpoint_name, generate_dataset, train, StepRecord, Trainer, FINAL_NAME, LOG_NAME};
