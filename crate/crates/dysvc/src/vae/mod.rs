//! Stage-2 voice conversion: a frame-wise variational autoencoder that
//! re-targets speaker identity while operating strictly one frame at a time,
//! trained nonparallel with reconstruction + KL + cyclic + adversarial
//! losses.

pub mod model;
pub mod train;

pub use model::{
    kl_to_standard_normal, DecodeMode, LatentPosterior, VaeConfig, VaeModel, LOGVAR_MAX,
    LOGVAR_MIN,
};
pub use train::{
    classifier_loss_graph, generator_loss_graph, train_speaker_probe, train_vae, GeneratorLoss,
    ProbeOptions, VaeLossRecord, VaeUtterance,
};
