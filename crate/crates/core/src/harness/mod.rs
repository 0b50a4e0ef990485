//! Training, evaluation, inference and checkpointing.

pub mod checkpoint;
pub mod eval;
pub mod infer;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use eval::{evaluate, evaluate_examples, report_json, EvalReport, EvalResult, Predictor};
pub use infer::{detect, infer, InferOutcome};
pub use optim::{reduce_lr_on_plateau, Adam, PlateauConfig, PlateauState};
pub use train::{epoch_order, metrics_csv, train, EpochMetrics, TrainConfig, TrainOutputs, TrainState, Trainer};
