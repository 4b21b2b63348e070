//! Optimization, checkpointing and evaluation.

pub mod checkpoint;
pub mod engine;
pub mod evaluate;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use engine::{EpochSummary, StepRecord, Trainer};
pub use evaluate::{evaluate, evaluate_checkpoint, Evaluation, WindowPrediction};
pub use optim::{step_lr, AdamHyper, AdamW};
