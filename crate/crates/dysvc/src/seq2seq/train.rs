//! Three-phase training protocol for the stage-1 converter:
//!
//! 1. decoder pretraining — text-to-speech on healthy reference data, training
//!    text encoder, decoder, and speaker table;
//! 2. encoder pretraining — speech self-reconstruction with the decoder and
//!    speaker table frozen, training only the speech encoder;
//! 3. voice-conversion training — parallel utterance pairs, fine-tuning
//!    speech encoder, decoder, and speaker table together.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nncore::{Adam, AdamConfig, ExportedParam, Scalar};
use crate::seq2seq::model::{Seq2SeqModel, SourceInput, TrainingPhase};

/// One transcribed utterance for the two pretraining phases.
pub struct TtsUtterance {
    pub utt_id: String,
    pub tokens: Vec<String>,
    pub speaker: String,
    pub mel: MelSpectrogram,
}

/// One parallel pair for voice-conversion training.
pub struct VcPair {
    pub utt_id: String,
    pub source_speaker: String,
    pub source: MelSpectrogram,
    pub target_speaker: String,
    pub target: MelSpectrogram,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Per-epoch averages. `validation` is present only when a validation set
/// was supplied.
#[derive(Debug, Clone, Copy)]
pub struct LossRecord {
    pub epoch: usize,
    pub total: f64,
    pub l1: f64,
    pub stop: f64,
    pub validation: Option<f64>,
}

pub struct VcTrainReport {
    pub records: Vec<LossRecord>,
    /// Epoch (1-based) whose parameters the model holds on return.
    pub best_epoch: usize,
    pub best_validation: Option<f64>,
}

fn adam_for_phase<S: Scalar>(phase: TrainingPhase, learning_rate: f64) -> Adam<S> {
    Adam::for_prefixes(
        AdamConfig {
            learning_rate,
            ..Default::default()
        },
        phase.trainable_prefixes(),
    )
}

fn shuffled(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

/// Phase 1: text-to-speech pretraining of text encoder + decoder + speaker
/// table. Feature statistics are fitted from the training spectrograms
/// before the first step.
pub fn pretrain_decoder<S: Scalar>(
    model: &mut Seq2SeqModel<S>,
    data: &[TtsUtterance],
    opts: &TrainOptions,
) -> Result<Vec<LossRecord>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("decoder pretraining data".into()));
    }
    model.fit_feature_stats(data.iter().map(|u| &u.mel))?;
    model.apply_phase(TrainingPhase::DecoderPretrain);
    let prepared = prepare_tts(model, data)?;
    let mut opt = adam_for_phase(TrainingPhase::DecoderPretrain, opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut records = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let (mut total, mut l1, mut stop) = (0.0, 0.0, 0.0);
        for &i in &shuffled(prepared.len(), &mut rng) {
            let (ids, spk, mel) = &prepared[i];
            model.engine_mut().reset();
            let loss = model.teacher_forced_loss(&SourceInput::Text(ids), mel, *spk)?;
            total += loss.l1 + loss.stop;
            l1 += loss.l1;
            stop += loss.stop;
            let lv = loss.total;
            model.engine_mut().backward(lv)?;
            opt.step(model.engine_mut())?;
        }
        model.engine_mut().reset();
        let n = prepared.len() as f64;
        records.push(LossRecord {
            epoch,
            total: total / n,
            l1: l1 / n,
            stop: stop / n,
            validation: None,
        });
    }
    Ok(records)
}

/// Phase 2: speech-encoder pretraining by self-reconstruction. The decoder,
/// text encoder, and speaker table must stay frozen; this is enforced here
/// and an error is raised if the freeze is violated.
pub fn pretrain_encoder<S: Scalar>(
    model: &mut Seq2SeqModel<S>,
    data: &[TtsUtterance],
    opts: &TrainOptions,
) -> Result<Vec<LossRecord>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("encoder pretraining data".into()));
    }
    model.apply_phase(TrainingPhase::EncoderPretrain);
    for prefix in ["dec.", "tenc.", "spk."] {
        if !model.prefix_frozen(prefix) {
            return Err(Error::InvalidArgument(format!(
                "encoder pretraining requires frozen `{prefix}` parameters"
            )));
        }
    }
    let prepared = prepare_tts(model, data)?;
    let mut opt = adam_for_phase(TrainingPhase::EncoderPretrain, opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut records = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let (mut total, mut l1, mut stop) = (0.0, 0.0, 0.0);
        for &i in &shuffled(prepared.len(), &mut rng) {
            let (_ids, spk, mel) = &prepared[i];
            model.engine_mut().reset();
            let loss = model.teacher_forced_loss(
                &SourceInput::Speech { mel, speaker: *spk },
                mel,
                *spk,
            )?;
            total += loss.l1 + loss.stop;
            l1 += loss.l1;
            stop += loss.stop;
            let lv = loss.total;
            model.engine_mut().backward(lv)?;
            opt.step(model.engine_mut())?;
        }
        model.engine_mut().reset();
        let n = prepared.len() as f64;
        records.push(LossRecord {
            epoch,
            total: total / n,
            l1: l1 / n,
            stop: stop / n,
            validation: None,
        });
    }
    Ok(records)
}

/// Phase 3: voice-conversion training on parallel pairs. When a validation
/// set is supplied, the model is restored to the epoch with the lowest
/// validation loss before returning.
pub fn train_vc<S: Scalar>(
    model: &mut Seq2SeqModel<S>,
    train_pairs: &[VcPair],
    val_pairs: &[VcPair],
    opts: &TrainOptions,
) -> Result<VcTrainReport> {
    if train_pairs.is_empty() {
        return Err(Error::EmptyInput("voice-conversion training pairs".into()));
    }
    model.apply_phase(TrainingPhase::VcTrain);
    let train = prepare_vc(model, train_pairs)?;
    let val = prepare_vc(model, val_pairs)?;
    let mut opt = adam_for_phase(TrainingPhase::VcTrain, opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut records = Vec::with_capacity(opts.epochs);
    let mut best: Option<(usize, f64, Vec<ExportedParam<S>>)> = None;
    for epoch in 1..=opts.epochs {
        let (mut total, mut l1, mut stop) = (0.0, 0.0, 0.0);
        for &i in &shuffled(train.len(), &mut rng) {
            let p = &train[i];
            model.engine_mut().reset();
            let loss = model.teacher_forced_loss(
                &SourceInput::Speech {
                    mel: &train_pairs[i].source,
                    speaker: p.0,
                },
                &train_pairs[i].target,
                p.1,
            )?;
            total += loss.l1 + loss.stop;
            l1 += loss.l1;
            stop += loss.stop;
            let lv = loss.total;
            model.engine_mut().backward(lv)?;
            opt.step(model.engine_mut())?;
        }
        model.engine_mut().reset();
        let n = train.len() as f64;
        let validation = if val.is_empty() {
            None
        } else {
            let mut v = 0.0;
            for (i, p) in val.iter().enumerate() {
                model.engine_mut().reset();
                let loss = model.teacher_forced_loss(
                    &SourceInput::Speech {
                        mel: &val_pairs[i].source,
                        speaker: p.0,
                    },
                    &val_pairs[i].target,
                    p.1,
                )?;
                v += loss.l1 + loss.stop;
            }
            model.engine_mut().reset();
            Some(v / val.len() as f64)
        };
        if let Some(v) = validation {
            let better = match &best {
                None => true,
                Some((_, bv, _)) => v < *bv,
            };
            if better {
                best = Some((epoch, v, model.engine().export_params()));
            }
        }
        records.push(LossRecord {
            epoch,
            total: total / n,
            l1: l1 / n,
            stop: stop / n,
            validation,
        });
    }
    let (best_epoch, best_validation) = match best {
        Some((e, v, params)) => {
            model.engine_mut().import_params(&params)?;
            (e, Some(v))
        }
        None => (opts.epochs, None),
    };
    Ok(VcTrainReport {
        records,
        best_epoch,
        best_validation,
    })
}

/// Index speakers and token ids once up front so epochs only do numeric work.
fn prepare_tts<'a, S: Scalar>(
    model: &Seq2SeqModel<S>,
    data: &'a [TtsUtterance],
) -> Result<Vec<(Vec<usize>, usize, &'a MelSpectrogram)>> {
    data.iter()
        .map(|u| {
            let ids = model.vocab().encode(&u.tokens, &u.utt_id)?;
            let spk = model.speakers().index(&u.speaker)?;
            Ok((ids, spk, &u.mel))
        })
        .collect()
}

fn prepare_vc<S: Scalar>(model: &Seq2SeqModel<S>, pairs: &[VcPair]) -> Result<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|p| {
            Ok((
                model.speakers().index(&p.source_speaker)?,
                model.speakers().index(&p.target_speaker)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::model::Seq2SeqConfig;
    use crate::seq2seq::text::{SpeakerTable, Vocabulary};

    fn tiny_cfg() -> Seq2SeqConfig {
        Seq2SeqConfig {
            mel_dim: 4,
            width: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_hidden: 16,
            max_positions: 32,
            ..Default::default()
        }
    }

    fn mel_of(t: usize, phase: f32) -> MelSpectrogram {
        let data: Vec<f32> = (0..t * 4)
            .map(|i| ((i as f32 * 0.7 + phase).sin()) * 0.8 - 0.2)
            .collect();
        MelSpectrogram::new(t, 4, data, 0.016, 0.064, 16_000).unwrap()
    }

    fn tts_corpus() -> Vec<TtsUtterance> {
        vec![
            TtsUtterance {
                utt_id: "u1".into(),
                tokens: vec!["ni3".into(), "hao3".into()],
                speaker: "r1".into(),
                mel: mel_of(6, 0.0),
            },
            TtsUtterance {
                utt_id: "u2".into(),
                tokens: vec!["hao3".into()],
                speaker: "r1".into(),
                mel: mel_of(4, 1.3),
            },
        ]
    }

    fn fresh_model() -> Seq2SeqModel<f32> {
        let vocab = Vocabulary::from_tokens(["ni3", "hao3"]);
        let speakers = SpeakerTable::from_names(["p", "r1"]);
        Seq2SeqModel::new(tiny_cfg(), vocab, speakers, 11).unwrap()
    }

    #[test]
    fn decoder_pretraining_reduces_loss() {
        let mut m = fresh_model();
        let data = tts_corpus();
        let opts = TrainOptions {
            epochs: 30,
            learning_rate: 3e-3,
            seed: 1,
        };
        let records = pretrain_decoder(&mut m, &data, &opts).unwrap();
        let first = records.first().unwrap().total;
        let last = records.last().unwrap().total;
        assert!(
            last < 0.5 * first,
            "loss did not fall enough: {first} -> {last}"
        );
    }

    #[test]
    fn encoder_pretraining_leaves_decoder_bit_identical() {
        let mut m = fresh_model();
        let data = tts_corpus();
        let opts = TrainOptions {
            epochs: 2,
            learning_rate: 1e-3,
            seed: 2,
        };
        pretrain_decoder(&mut m, &data, &opts).unwrap();
        let before: Vec<_> = m
            .engine()
            .export_params()
            .into_iter()
            .filter(|(name, ..)| !name.starts_with("senc."))
            .collect();
        pretrain_encoder(&mut m, &data, &opts).unwrap();
        let after: Vec<_> = m
            .engine()
            .export_params()
            .into_iter()
            .filter(|(name, ..)| !name.starts_with("senc."))
            .collect();
        assert_eq!(before.len(), after.len());
        for (b, a) in before.iter().zip(&after) {
            assert_eq!(b.0, a.0);
            assert_eq!(b.3, a.3, "frozen parameter {} changed", b.0);
        }
    }

    #[test]
    fn vc_training_restores_best_validation_epoch() {
        let mut m = fresh_model();
        let data = tts_corpus();
        pretrain_decoder(
            &mut m,
            &data,
            &TrainOptions {
                epochs: 3,
                learning_rate: 1e-3,
                seed: 3,
            },
        )
        .unwrap();
        let pairs = vec![VcPair {
            utt_id: "u1".into(),
            source_speaker: "p".into(),
            source: mel_of(6, 2.0),
            target_speaker: "r1".into(),
            target: mel_of(5, 0.4),
        }];
        let val = vec![VcPair {
            utt_id: "u2".into(),
            source_speaker: "p".into(),
            source: mel_of(5, 2.5),
            target_speaker: "r1".into(),
            target: mel_of(4, 0.9),
        }];
        let report = train_vc(
            &mut m,
            &pairs,
            &val,
            &TrainOptions {
                epochs: 4,
                learning_rate: 2e-3,
                seed: 4,
            },
        )
        .unwrap();
        assert_eq!(report.records.len(), 4);
        let best = report.best_validation.unwrap();
        let recorded_min = report
            .records
            .iter()
            .filter_map(|r| r.validation)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, recorded_min);
        assert_eq!(
            report.best_epoch,
            report
                .records
                .iter()
                .find(|r| r.validation == Some(best))
                .unwrap()
                .epoch
        );
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let run = || {
            let mut m = fresh_model();
            let data = tts_corpus();
            let opts = TrainOptions {
                epochs: 3,
                learning_rate: 1e-3,
                seed: 9,
            };
            pretrain_decoder(&mut m, &data, &opts).unwrap();
            m.engine().export_params()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.3, y.3, "parameter {} diverged across runs", x.0);
        }
    }

    #[test]
    fn empty_training_data_is_an_error() {
        let mut m = fresh_model();
        let opts = TrainOptions::default();
        assert!(matches!(
            pretrain_decoder(&mut m, &[], &opts),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            train_vc(&mut m, &[], &[], &opts),
            Err(Error::EmptyInput(_))
        ));
    }
}
