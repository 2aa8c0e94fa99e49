//! Adam, the adversarial training loops of both stages, and the compact
//! classifier.

mod adam;
mod classifier;
mod log;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use classifier::{
    cross_entropy, ClassifierModel, ClassifierNet, Predictions, CLASSIFIER_WIDTHS, FEATURE_DIM,
    NUM_CLASSES,
};
pub use log::{EpochSnapshot, StepRecord, TrainLog, TRAIN_LOG_HEADER};
pub use train::{accuracy, train_classifier, train_stage1, train_stage2, TrainConfig};
