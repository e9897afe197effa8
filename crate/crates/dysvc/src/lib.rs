//! Two-stage voice conversion for dysarthric speech, desk scale.
//!
//! Stage 1 is a sequence-to-sequence spectrogram converter (Transformer
//! encoder-decoder, trained with TTS-style decoder pretraining, encoder
//! pretraining against the frozen decoder, then parallel conversion
//! training). Stage 2 is a frame-wise variational autoencoder that
//! re-targets speaker identity without touching timing. The crate also
//! ships the objective evaluation toolchain used to pick reference
//! speakers: DTW-aligned mel-cepstral distortion, character/syllable
//! error rates, and ranking/report emission.
//!
//! Everything is seedable and deterministic; with the default `parallel`
//! feature the data-parallel kernels run on rayon but produce bit-identical
//! results to the sequential fallback (`--no-default-features`).

pub mod dsp;
pub mod error;
pub mod eval;
pub mod nncore;
pub mod par;
pub mod pipeline;
pub mod seq2seq;
pub mod vae;

pub use error::{Error, Result};
