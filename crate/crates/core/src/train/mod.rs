//! Training objectives and loops: supervised fine-tuning, reward modelling,
//! and direct preference optimization.

mod config;
pub mod gradcheck;
mod losses;
mod optim;
mod trainer;

pub use config::{DpoConfig, RmConfig, SftConfig, SftStage};
pub use losses::{
    dpo_loss, dpo_loss_and_grad, dpo_margin, neg_log_sigmoid, reference_logprobs, reward_margin, rm_loss,
    rm_loss_and_grad, sft_loss, sft_loss_and_grad, sigmoid, LossOutput,
};
pub use optim::{clip_grad_norm, Optimizer, OptimizerConfig};
pub use trainer::{
    dataset_hash, train, train_dpo, train_rm, train_sft, LossEntry, Objective, RunStatus, TrainAbort, TrainConfig,
    TrainInputs, TrainResult, TrainRunManifest,
};
