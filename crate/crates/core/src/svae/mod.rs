//! Toy patch-wise VAE under four interchangeable posterior families.

mod data;
mod model;
mod train;

pub use data::{DatasetManifest, DatasetSpec, ShapeKind, ToyDataset};
pub use model::{
    patchify, sample_latent, sample_latent_with, unpatchify, BatchNoise, LatentNoise, LossGraph, Posterior, PosteriorFamily, SvaeConfig,
    SvaeModel,
};
pub use train::{train_svae, EpochLog, SvaeTrainer, TrainLog};
