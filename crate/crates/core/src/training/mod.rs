//! Optimization loop, augmentation sampler, checkpoints and synthetic data.

mod checkpoint;
mod config;
mod data;
mod model;
mod optim;
pub mod rng;
pub mod synth;
mod trainer;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, load_checkpoint_for, save_checkpoint, vocab_path};
pub use config::TrainConfig;
pub use data::{make_batches, Dataset, TrainBatch};
pub use model::{
    batch_loss, block_names, config_hash, loss_and_gradients, loss_value, ModelConfig, ModelParams, ModelVars,
};
pub use optim::{OptimizerState, BETA1, BETA2, EPSILON};
pub use trainer::{check_fits, init_params, train, train_step, StepRecord};
