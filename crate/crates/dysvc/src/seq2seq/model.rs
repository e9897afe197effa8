//! Stage-1 sequence-to-sequence converter: a small pre-norm Transformer
//! encoder-decoder over mel frames (or text tokens during decoder
//! pretraining), many-to-many through a shared speaker embedding table.
//!
//! Parameter name prefixes partition the model for phase freezing and
//! optimizer filtering: `tenc.*` text encoder, `senc.*` speech encoder,
//! `dec.*` decoder (including output and stop heads), `spk.*` speaker
//! table, `feat.*` non-trainable feature statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{MelSpectrogram, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::nncore::layers::sinusoidal_table;
use crate::nncore::{
    Embedding, Engine, FeedForward, LayerNorm, Linear, Mask, MultiHeadAttention, Scalar, Tensor,
    Var,
};
use crate::seq2seq::text::{SpeakerTable, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seq2SeqConfig {
    pub mel_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_hidden: usize,
    /// Frames predicted per decoder step.
    pub reduction: usize,
    pub stop_pos_weight: f64,
    pub stop_threshold: f64,
    /// Decoding is capped at `ceil(ratio_cap * source_frames)` frames.
    pub ratio_cap: f64,
    pub max_positions: usize,
    pub learning_rate: f64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Seq2SeqConfig {
            mel_dim: 80,
            width: 64,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_hidden: 128,
            reduction: 2,
            stop_pos_weight: 5.0,
            stop_threshold: 0.5,
            ratio_cap: 2.0,
            max_positions: 512,
            learning_rate: 1e-3,
        }
    }
}

/// Training phases of the three-step protocol, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingPhase {
    DecoderPretrain,
    EncoderPretrain,
    VcTrain,
}

impl TrainingPhase {
    /// Parameter prefixes that train during this phase; everything else is
    /// frozen.
    pub fn trainable_prefixes(self) -> &'static [&'static str] {
        match self {
            TrainingPhase::DecoderPretrain => &["tenc.", "dec.", "spk."],
            TrainingPhase::EncoderPretrain => &["senc."],
            TrainingPhase::VcTrain => &["senc.", "dec.", "spk."],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingPhase::DecoderPretrain => "decoder-pretrain",
            TrainingPhase::EncoderPretrain => "encoder-pretrain",
            TrainingPhase::VcTrain => "vc-train",
        }
    }
}

struct EncoderBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl EncoderBlock {
    fn new<S: Scalar>(
        eng: &mut Engine<S>,
        prefix: &str,
        cfg: &Seq2SeqConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(EncoderBlock {
            ln1: LayerNorm::new(eng, &format!("{prefix}.ln1"), cfg.width)?,
            attn: MultiHeadAttention::new(eng, &format!("{prefix}.attn"), cfg.width, cfg.heads, rng)?,
            ln2: LayerNorm::new(eng, &format!("{prefix}.ln2"), cfg.width)?,
            ffn: FeedForward::new(eng, &format!("{prefix}.ffn"), cfg.width, cfg.ffn_hidden, rng)?,
        })
    }

    fn forward<S: Scalar>(&self, eng: &mut Engine<S>, x: Var) -> Result<Var> {
        let n = self.ln1.forward(eng, x)?;
        let a = self.attn.forward(eng, n, n, None)?;
        let x = eng.add(x, a)?;
        let n = self.ln2.forward(eng, x)?;
        let f = self.ffn.forward(eng, n)?;
        eng.add(x, f)
    }
}

struct DecoderBlock {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ffn: FeedForward,
}

impl DecoderBlock {
    fn new<S: Scalar>(
        eng: &mut Engine<S>,
        prefix: &str,
        cfg: &Seq2SeqConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(DecoderBlock {
            ln1: LayerNorm::new(eng, &format!("{prefix}.ln1"), cfg.width)?,
            self_attn: MultiHeadAttention::new(
                eng,
                &format!("{prefix}.self"),
                cfg.width,
                cfg.heads,
                rng,
            )?,
            ln2: LayerNorm::new(eng, &format!("{prefix}.ln2"), cfg.width)?,
            cross_attn: MultiHeadAttention::new(
                eng,
                &format!("{prefix}.cross"),
                cfg.width,
                cfg.heads,
                rng,
            )?,
            ln3: LayerNorm::new(eng, &format!("{prefix}.ln3"), cfg.width)?,
            ffn: FeedForward::new(eng, &format!("{prefix}.ffn"), cfg.width, cfg.ffn_hidden, rng)?,
        })
    }

    fn forward<S: Scalar>(
        &self,
        eng: &mut Engine<S>,
        x: Var,
        memory: Var,
        causal: &Mask,
    ) -> Result<Var> {
        let n = self.ln1.forward(eng, x)?;
        let a = self.self_attn.forward(eng, n, n, Some(causal))?;
        let x = eng.add(x, a)?;
        let n = self.ln2.forward(eng, x)?;
        let c = self.cross_attn.forward(eng, n, memory, None)?;
        let x = eng.add(x, c)?;
        let n = self.ln3.forward(eng, x)?;
        let f = self.ffn.forward(eng, n)?;
        eng.add(x, f)
    }
}

/// Source side of a forward pass.
pub enum SourceInput<'a> {
    /// Token ids (decoder pretraining).
    Text(&'a [usize]),
    /// Mel frames plus the source speaker (encoder pretraining and VC).
    Speech {
        mel: &'a MelSpectrogram,
        speaker: usize,
    },
}

/// Result of autoregressive conversion.
pub struct ConvertOutcome {
    pub mel: MelSpectrogram,
    /// True when decoding hit the frame cap instead of the stop token.
    pub truncated: bool,
}

/// Scalar components of one teacher-forced loss evaluation.
pub struct TeacherLoss {
    pub total: Var,
    pub l1: f64,
    pub stop: f64,
}

pub struct Seq2SeqModel<S: Scalar> {
    cfg: Seq2SeqConfig,
    eng: Engine<S>,
    vocab: Vocabulary,
    speakers: SpeakerTable,
    text_embed: Embedding,
    tenc_blocks: Vec<EncoderBlock>,
    tenc_ln: LayerNorm,
    senc_prenet: Linear,
    senc_blocks: Vec<EncoderBlock>,
    senc_ln: LayerNorm,
    dec_prenet: Linear,
    dec_blocks: Vec<DecoderBlock>,
    dec_ln: LayerNorm,
    dec_out: Linear,
    dec_stop: Linear,
    spk: Embedding,
    feat_mean: Var,
    feat_std: Var,
    pe: Tensor<S>,
}

impl<S: Scalar> Seq2SeqModel<S> {
    pub fn new(
        cfg: Seq2SeqConfig,
        vocab: Vocabulary,
        speakers: SpeakerTable,
        seed: u64,
    ) -> Result<Self> {
        if speakers.is_empty() {
            return Err(Error::EmptyInput("speaker table".into()));
        }
        let mut eng = Engine::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text_embed = Embedding::new(&mut eng, "tenc.embed", vocab.len(), cfg.width, &mut rng)?;
        let mut tenc_blocks = Vec::new();
        for l in 0..cfg.encoder_layers {
            tenc_blocks.push(EncoderBlock::new(&mut eng, &format!("tenc.l{l}"), &cfg, &mut rng)?);
        }
        let tenc_ln = LayerNorm::new(&mut eng, "tenc.ln", cfg.width)?;

        let senc_prenet = Linear::new(&mut eng, "senc.prenet", cfg.mel_dim, cfg.width, &mut rng)?;
        let mut senc_blocks = Vec::new();
        for l in 0..cfg.encoder_layers {
            senc_blocks.push(EncoderBlock::new(&mut eng, &format!("senc.l{l}"), &cfg, &mut rng)?);
        }
        let senc_ln = LayerNorm::new(&mut eng, "senc.ln", cfg.width)?;

        let dec_prenet = Linear::new(&mut eng, "dec.prenet", cfg.mel_dim, cfg.width, &mut rng)?;
        let mut dec_blocks = Vec::new();
        for l in 0..cfg.decoder_layers {
            dec_blocks.push(DecoderBlock::new(&mut eng, &format!("dec.l{l}"), &cfg, &mut rng)?);
        }
        let dec_ln = LayerNorm::new(&mut eng, "dec.ln", cfg.width)?;
        let dec_out = Linear::new(
            &mut eng,
            "dec.out",
            cfg.width,
            cfg.reduction * cfg.mel_dim,
            &mut rng,
        )?;
        let dec_stop = Linear::new(&mut eng, "dec.stop", cfg.width, cfg.reduction, &mut rng)?;

        let spk = Embedding::new(&mut eng, "spk", speakers.len(), cfg.width, &mut rng)?;

        let feat_mean = eng.add_param("feat.mean", Tensor::zeros(1, cfg.mel_dim), false)?;
        let feat_std = eng.add_param(
            "feat.std",
            Tensor::from_vec(1, cfg.mel_dim, vec![S::one(); cfg.mel_dim])?,
            false,
        )?;

        let pe = sinusoidal_table(cfg.max_positions, cfg.width);
        Ok(Seq2SeqModel {
            cfg,
            eng,
            vocab,
            speakers,
            text_embed,
            tenc_blocks,
            tenc_ln,
            senc_prenet,
            senc_blocks,
            senc_ln,
            dec_prenet,
            dec_blocks,
            dec_ln,
            dec_out,
            dec_stop,
            spk,
            feat_mean,
            feat_std,
            pe,
        })
    }

    pub fn config(&self) -> &Seq2SeqConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn speakers(&self) -> &SpeakerTable {
        &self.speakers
    }

    pub fn engine(&self) -> &Engine<S> {
        &self.eng
    }

    pub fn engine_mut(&mut self) -> &mut Engine<S> {
        &mut self.eng
    }

    /// Freeze/unfreeze parameter groups for a phase. Feature statistics are
    /// never trainable.
    pub fn apply_phase(&mut self, phase: TrainingPhase) {
        self.eng.reset();
        for prefix in ["tenc.", "senc.", "dec.", "spk."] {
            let on = phase.trainable_prefixes().contains(&prefix);
            self.eng.set_trainable_prefix(prefix, on);
        }
    }

    /// True when every parameter under `prefix` is frozen.
    pub fn prefix_frozen(&self, prefix: &str) -> bool {
        (0..self.eng.param_count())
            .filter(|&i| self.eng.param(i).name.starts_with(prefix))
            .all(|i| !self.eng.param(i).trainable)
    }

    /// Estimate per-dimension mean/std over the given spectrograms and store
    /// them in the (non-trainable, checkpointed) `feat.*` parameters.
    pub fn fit_feature_stats<'a, I: IntoIterator<Item = &'a MelSpectrogram>>(
        &mut self,
        mels: I,
    ) -> Result<()> {
        let d = self.cfg.mel_dim;
        let (mean, std) = crate::dsp::per_dim_stats(mels, d)?;
        let mean: Vec<S> = mean.into_iter().map(S::from_f64).collect();
        let std: Vec<S> = std.into_iter().map(S::from_f64).collect();
        self.eng.load_param("feat.mean", 1, d, mean)?;
        self.eng.load_param("feat.std", 1, d, std)?;
        Ok(())
    }

    fn stats(&self) -> (Vec<S>, Vec<S>) {
        (
            self.eng.value(self.feat_mean).data().to_vec(),
            self.eng.value(self.feat_std).data().to_vec(),
        )
    }

    /// Flattened normalized frames of a spectrogram.
    fn normalize(&self, mel: &MelSpectrogram) -> Result<Vec<S>> {
        if mel.dims() != self.cfg.mel_dim {
            return Err(Error::Shape(format!(
                "mel dim {} vs model {}",
                mel.dims(),
                self.cfg.mel_dim
            )));
        }
        let (mean, std) = self.stats();
        let d = self.cfg.mel_dim;
        let mut out = Vec::with_capacity(mel.frames() * d);
        for t in 0..mel.frames() {
            for (j, &v) in mel.row(t).iter().enumerate() {
                out.push((S::from_f64(v as f64) - mean[j]) / std[j]);
            }
        }
        Ok(out)
    }

    fn denormalize_row(&self, row: &[S], mean: &[S], std: &[S]) -> Vec<f32> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| (v * std[j] + mean[j]).to_f64() as f32)
            .collect()
    }

    /// The normalized value of a silence (log-floor) frame — used for the
    /// decoder GO frame and reduction padding.
    fn floor_row(&self) -> Vec<S> {
        let (mean, std) = self.stats();
        let floor = S::from_f64((LOG_FLOOR as f64).ln());
        (0..self.cfg.mel_dim)
            .map(|j| (floor - mean[j]) / std[j])
            .collect()
    }

    fn positional(&mut self, len: usize) -> Result<Var> {
        if len > self.cfg.max_positions {
            return Err(Error::Shape(format!(
                "sequence of {len} exceeds max positions {}",
                self.cfg.max_positions
            )));
        }
        let w = self.cfg.width;
        let data = self.pe.data()[..len * w].to_vec();
        self.eng.leaf(Tensor::from_vec(len, w, data)?)
    }

    fn speaker_row(&mut self, speaker: usize) -> Result<Var> {
        self.eng.embed(self.spk.table, &[speaker])
    }

    /// Encode the source side into cross-attention memory.
    pub fn encode_source(&mut self, src: &SourceInput) -> Result<Var> {
        match src {
            SourceInput::Text(ids) => {
                if ids.is_empty() {
                    return Err(Error::EmptyInput("text input".into()));
                }
                let mut x = self.text_embed.forward(&mut self.eng, ids)?;
                let pe = self.positional(ids.len())?;
                x = self.eng.add(x, pe)?;
                for i in 0..self.tenc_blocks.len() {
                    x = self.tenc_blocks[i].forward(&mut self.eng, x)?;
                }
                self.tenc_ln.forward(&mut self.eng, x)
            }
            SourceInput::Speech { mel, speaker } => {
                let t = mel.frames();
                let data = self.normalize(mel)?;
                let input = self.eng.leaf(Tensor::from_vec(t, self.cfg.mel_dim, data)?)?;
                let mut x = self.senc_prenet.forward(&mut self.eng, input)?;
                x = self.eng.relu(x)?;
                let pe = self.positional(t)?;
                x = self.eng.add(x, pe)?;
                for i in 0..self.senc_blocks.len() {
                    x = self.senc_blocks[i].forward(&mut self.eng, x)?;
                }
                x = self.senc_ln.forward(&mut self.eng, x)?;
                let emb = self.speaker_row(*speaker)?;
                self.eng.add_row(x, emb)
            }
        }
    }

    /// Run the decoder over `steps` teacher/autoregressive input frames.
    /// Returns flattened mel predictions (`steps * r` rows) and stop logits
    /// (`steps * r` rows of width 1).
    fn decode(
        &mut self,
        memory: Var,
        dec_in: Tensor<S>,
        target_speaker: usize,
    ) -> Result<(Var, Var)> {
        let steps = dec_in.rows();
        let input = self.eng.leaf(dec_in)?;
        let mut x = self.dec_prenet.forward(&mut self.eng, input)?;
        x = self.eng.relu(x)?;
        let emb = self.speaker_row(target_speaker)?;
        x = self.eng.add_row(x, emb)?;
        let pe = self.positional(steps)?;
        x = self.eng.add(x, pe)?;
        let causal = Mask::causal(steps);
        for i in 0..self.dec_blocks.len() {
            x = self.dec_blocks[i].forward(&mut self.eng, x, memory, &causal)?;
        }
        x = self.dec_ln.forward(&mut self.eng, x)?;
        let mel_flat = self.dec_out.forward(&mut self.eng, x)?;
        let mel_rows = self
            .eng
            .reshape(mel_flat, steps * self.cfg.reduction, self.cfg.mel_dim)?;
        let stop = self.dec_stop.forward(&mut self.eng, x)?;
        let stop_rows = self.eng.reshape(stop, steps * self.cfg.reduction, 1)?;
        Ok((mel_rows, stop_rows))
    }

    /// Teacher-forced decoder inputs and padded targets for one utterance.
    /// Targets are padded with floor frames to a multiple of the reduction
    /// factor.
    fn teacher_tensors(&self, target: &MelSpectrogram) -> Result<(Tensor<S>, Tensor<S>, Vec<S>)> {
        let r = self.cfg.reduction;
        let tt = target.frames();
        let steps = tt.div_ceil(r);
        let norm = self.normalize(target)?;
        let floor = self.floor_row();
        let d = self.cfg.mel_dim;

        let mut padded = Vec::with_capacity(steps * r * d);
        padded.extend_from_slice(&norm);
        for _ in tt..steps * r {
            padded.extend_from_slice(&floor);
        }

        let mut dec_in = Vec::with_capacity(steps * d);
        dec_in.extend_from_slice(&floor); // GO frame
        for s in 1..steps {
            let frame = s * r - 1;
            dec_in.extend_from_slice(&padded[frame * d..(frame + 1) * d]);
        }

        let stop_targets: Vec<S> = (0..steps * r)
            .map(|i| if i + 1 >= tt { S::one() } else { S::zero() })
            .collect();
        Ok((
            Tensor::from_vec(steps, d, dec_in)?,
            Tensor::from_vec(steps * r, d, padded)?,
            stop_targets,
        ))
    }

    /// Teacher-forced loss (L1 on mel frames + weighted stop BCE) for one
    /// utterance. The caller owns `backward`/optimizer/reset.
    pub fn teacher_forced_loss(
        &mut self,
        src: &SourceInput,
        target: &MelSpectrogram,
        target_speaker: usize,
    ) -> Result<TeacherLoss> {
        let memory = self.encode_source(src)?;
        let (dec_in, padded, stop_targets) = self.teacher_tensors(target)?;
        let (pred, stop_logits) = self.decode(memory, dec_in, target_speaker)?;
        let target_leaf = self.eng.leaf(padded)?;
        let diff = self.eng.sub(pred, target_leaf)?;
        let absdiff = self.eng.abs(diff)?;
        let l1 = self.eng.mean_all(absdiff)?;
        let stop = self.eng.bce_with_logits_mean(
            stop_logits,
            &stop_targets,
            S::from_f64(self.cfg.stop_pos_weight),
        )?;
        let total = self.eng.add(l1, stop)?;
        Ok(TeacherLoss {
            total,
            l1: self.eng.scalar_value(l1).to_f64(),
            stop: self.eng.scalar_value(stop).to_f64(),
        })
    }

    /// Teacher-forced mel predictions in normalized space (used by the
    /// causality probes). Does not reset the tape.
    pub fn teacher_forced_predict(
        &mut self,
        src: &SourceInput,
        target: &MelSpectrogram,
        target_speaker: usize,
    ) -> Result<Vec<S>> {
        let memory = self.encode_source(src)?;
        let (dec_in, _padded, _stop) = self.teacher_tensors(target)?;
        let (pred, _stop_logits) = self.decode(memory, dec_in, target_speaker)?;
        Ok(self.eng.value(pred).data().to_vec())
    }

    /// Autoregressive conversion. Decoding stops when any stop-token
    /// probability in the newest frame group exceeds the threshold, or at
    /// `ceil(ratio_cap * source_frames)` frames, in which case the result is
    /// flagged truncated rather than failing.
    pub fn convert(
        &mut self,
        source: &MelSpectrogram,
        source_speaker: &str,
        target_speaker: &str,
    ) -> Result<ConvertOutcome> {
        let src_idx = self.speakers.index(source_speaker)?;
        let tgt_idx = self.speakers.index(target_speaker)?;
        if source.frames() == 0 {
            return Err(Error::EmptyInput("conversion source".into()));
        }
        let r = self.cfg.reduction;
        let d = self.cfg.mel_dim;
        let max_frames = ((self.cfg.ratio_cap * source.frames() as f64).ceil() as usize).max(r);
        let max_steps = max_frames.div_ceil(r);
        let floor = self.floor_row();
        let (mean, std) = self.stats();

        let mut produced: Vec<S> = Vec::new(); // normalized frames, flattened
        let mut stopped = false;
        let mut steps = 0usize;
        while steps < max_steps && !stopped {
            steps += 1;
            self.eng.reset();
            let memory = self.encode_source(&SourceInput::Speech {
                mel: source,
                speaker: src_idx,
            })?;
            let mut dec_in = Vec::with_capacity(steps * d);
            dec_in.extend_from_slice(&floor);
            for s in 1..steps {
                let frame = s * r - 1;
                dec_in.extend_from_slice(&produced[frame * d..(frame + 1) * d]);
            }
            let (pred, stop_logits) =
                self.decode(memory, Tensor::from_vec(steps, d, dec_in)?, tgt_idx)?;
            let pred_rows = self.eng.value(pred).data();
            let stop_vals = self.eng.value(stop_logits).data();
            let group_start = (steps - 1) * r;
            for i in 0..r {
                let row = &pred_rows[(group_start + i) * d..(group_start + i + 1) * d];
                produced.extend_from_slice(row);
                let p = 1.0 / (1.0 + (-stop_vals[group_start + i].to_f64()).exp());
                if p > self.cfg.stop_threshold {
                    stopped = true;
                    break;
                }
            }
        }
        self.eng.reset();

        let mut frames = produced.len() / d;
        let truncated = !stopped;
        if frames > max_frames {
            frames = max_frames;
        }
        let mut data = Vec::with_capacity(frames * d);
        for t in 0..frames {
            data.extend(self.denormalize_row(&produced[t * d..(t + 1) * d], &mean, &std));
        }
        Ok(ConvertOutcome {
            mel: MelSpectrogram::new(
                frames,
                d,
                data,
                source.hop_seconds,
                source.window_seconds,
                source.sample_rate,
            )?,
            truncated,
        })
    }
}
