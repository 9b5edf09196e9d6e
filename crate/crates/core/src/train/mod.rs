//! Training: optimizers, datasets, the training loop and checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ParamEntry, CHECKPOINT_VERSION};
pub use dataset::{kfold_indices, Dataset, Fold};
pub use optim::{clip_grad_norm, cosine_lr, scheduled_lr, Optimizer, OptimizerConfig, OptimizerKind, Schedule};
pub use trainer::{
    argmax_rows, batch_loss, class_weights_for, evaluate, evaluate_mapped, history_to_text, predict, restore, snapshot, train, EpochRecord, Freeze, StopReason,
    TrainConfig, TrainOutcome, Trainer,
};
