//! Info-WGAN for facies grids: networks, losses, training, checkpoints and
//! latent-space well conditioning.

pub mod checkpoint;
pub mod condition;
pub mod error;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod params;
pub mod train;

pub use checkpoint::CheckpointBundle;
pub use condition::{
    condition, condition_many, conditional_etype, conditional_seeds, contextual_loss, normalized_gd_step, perceptual_loss,
    CodeMode, ConditionalEnsemble, ConditioningConfig, ConditioningTrace,
};
pub use error::{GanError, Result};
pub use losses::{
    combined_losses, gan_loss_reference, gradient_penalty, info_loss, wasserstein_estimate, GpPoints, LossReport,
    LossWeights,
};
pub use nets::{build_critic_classifier, build_generator, CriticClassifierNet, GeneratorNet, Mode, NetConfig};
pub use train::{classify, classify_accuracy, sample, train, train_with, LossLog, TrainConfig, Trainer};
