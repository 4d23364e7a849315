//! Autoregressive token model: causal transformer, rectified-flow head,
//! guided Euler sampling and constant-norm refeeding.

mod decode;
mod head;
mod process;
mod sequence;
mod train;
mod transformer;

pub use decode::{decode_sequence, DecodeDiag, DecodeOptions, DecodeOutput, RefeedMode};
pub use head::{euler_endpoint, rf_loss_plain, sample_next_token, time_features, CfgKind, CfgSchedule, NextToken, RfNoise, StepDiag, VelocityHead};
pub use process::{mean_cosine_to_process, MarkovSphereProcess, ProcessSpec};
pub use sequence::{TokenSequence, NORM_TOL};
pub use train::{train_ar, ArLogRow, ArTrainLog, ArTrainer};
pub use transformer::{ArConfig, ArModel, KvCache, RMS_EPS};
