//! Stage-1 voice conversion: a sequence-to-sequence Transformer over mel
//! frames with a three-phase training protocol (decoder pretraining on
//! text-to-speech, speech-encoder pretraining by self-reconstruction with a
//! frozen decoder, then parallel voice-conversion training).

pub mod model;
pub mod text;
pub mod train;

pub use model::{
    ConvertOutcome, Seq2SeqConfig, Seq2SeqModel, SourceInput, TeacherLoss, TrainingPhase,
};
pub use text::{SpeakerTable, Vocabulary, EOS};
pub use train::{
    pretrain_decoder, pretrain_encoder, train_vc, LossRecord, TrainOptions, TtsUtterance, VcPair,
    VcTrainReport,
};
