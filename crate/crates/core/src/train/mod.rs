//! Joint optimization of the backbone and its tap heads.

mod balance;
mod config;
mod objective;
mod optim;
mod step;
mod weights;

pub use balance::balance_lambda;
pub use config::{AdaptiveBalance, Balance, OptimizerKind, TrainConfig};
pub use objective::{regularizer, ss_loss, training_density};
pub use optim::{clip_global_norm, cosine_lr, warmup_factor, Optimizer};
pub use step::{
    compute_gradients, eval_ss, fit, fit_classifier, mean_nll, train_step, EpochRecord, GradParts,
    StepDiag, TrainLog,
};
pub use weights::{fit_layer_weights, layer_weights_from_ebar, LayerWeights};
