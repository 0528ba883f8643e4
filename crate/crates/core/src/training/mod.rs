//! Training loops for the conditional GAN and its VAE baseline.

mod config;
mod gan;
mod log;
mod vae;

pub use config::{TrainConfig, Variant};
pub use gan::{
    discriminator_accuracy, latent, prepare, sample_images, step_graph, GanTrainer, Prepared,
    StepGraph, StepLosses,
};
pub use log::{EpochLoss, LossLog};
pub use vae::{train_vae, Vae, VaeLosses};
