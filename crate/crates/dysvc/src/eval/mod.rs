//! Objective evaluation: DTW alignment, mel-cepstral distortion, token
//! error rates with tone stripping, and reference-speaker ranking.

pub mod dtw;
pub mod error_rate;
pub mod mcd;
pub mod ranking;
pub mod token;

pub use dtw::{dtw_align, AlignmentPath};
pub use error_rate::{error_rate, syllable_error_rate, ErrorRateResult};
pub use mcd::{mcd, MCD_SCALE};
pub use ranking::{
    load_scores_csv, rank_reference_speakers, save_scores_csv, scores_to_csv, stage_delta,
    Criterion, SpeakerScore, SpeakerScoreTable, Stage, SCORES_CSV_HEADER,
};
pub use token::{load_transcripts, save_transcripts, strip_tone, strip_tone_token, Transcriber};
