//! Phase orchestration for a two-stage conversion run.
//!
//! A run directory accumulates artifacts per phase:
//!
//! ```text
//! <out>/cache/features-<hash>/<speaker>/<utt>.dysf   extracted features
//! <out>/stage1/decoder.dysvc (+ .meta)               decoder pretraining
//! <out>/stage1/encoder.dysvc (+ .meta)               encoder pretraining
//! <out>/stage1/vc.dysvc      (+ .meta)               conversion training
//! <out>/stage1/converted/<ref>/<utt>.dysf            stage-1 outputs
//! <out>/stage2/vae.dysvc     (+ .meta)               speaker model
//! <out>/stage2/restored/<ref>/<utt>.dysf             stage-2 outputs
//! <out>/synth/<stage>/<ref>/<utt>.wav                waveform renders
//! <out>/report/…                                     scores and summaries
//! ```
//!
//! Each training phase records the configuration hash it was built from in a
//! `.meta` sidecar; reruns skip the phase while the hash still matches, and
//! downstream phases refuse to consume checkpoints whose hash is stale.

use std::path::{Path, PathBuf};

use crate::dsp::{
    griffin_lim, load_features, load_wav, logmel, mel_cepstrum, mel_to_magnitude, resample,
    save_features, save_wav, MelSpectrogram,
};
use crate::error::{Error, Result};
use crate::eval::{
    load_transcripts, save_scores_csv, syllable_error_rate, SpeakerScore, SpeakerScoreTable, Stage,
};
use crate::pipeline::checkpoint::{
    load_checkpoint, read_sidecar_hash, records_from_params, records_to_params, save_checkpoint,
    write_sidecar_hash, ParamRecord,
};
use crate::pipeline::config::{cache_root, PipelineConfig};
use crate::pipeline::manifest::{CorpusManifest, ManifestRecord, Split};
use crate::seq2seq::{
    pretrain_decoder, pretrain_encoder, train_vc, LossRecord, Seq2SeqModel, SpeakerTable,
    TrainOptions, TtsUtterance, VcPair, Vocabulary,
};
use crate::vae::{train_vae, DecodeMode, VaeLossRecord, VaeModel, VaeUtterance};

/// Whether a phase did work or found a current checkpoint and skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseStatus {
    Skipped,
    Completed,
}

/// Conversion phase tally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConvertStats {
    pub converted: usize,
    /// Outputs that hit the length cap instead of the stop token.
    pub truncated: usize,
}

pub struct Runner {
    config: PipelineConfig,
    manifest: CorpusManifest,
    out: PathBuf,
}

impl Runner {
    pub fn new(
        config: PipelineConfig,
        manifest: CorpusManifest,
        out: impl Into<PathBuf>,
    ) -> Result<Self> {
        config.features.validate()?;
        config.validate_speakers(&manifest.speakers())?;
        Ok(Runner {
            config,
            manifest,
            out: out.into(),
        })
    }

    pub fn from_paths(
        config_path: impl AsRef<Path>,
        manifest_path: impl AsRef<Path>,
        out: impl Into<PathBuf>,
    ) -> Result<Self> {
        let config = PipelineConfig::load(config_path)?;
        let manifest = CorpusManifest::load(manifest_path)?;
        Runner::new(config, manifest, out)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    // ---- layout ---------------------------------------------------------

    pub fn features_dir(&self) -> PathBuf {
        let hash = self.config.feature_hash();
        cache_root(&self.out).join(format!("features-{}", &hash[..12]))
    }

    pub fn decoder_checkpoint(&self) -> PathBuf {
        self.out.join("stage1").join("decoder.dysvc")
    }

    pub fn encoder_checkpoint(&self) -> PathBuf {
        self.out.join("stage1").join("encoder.dysvc")
    }

    pub fn vc_checkpoint(&self) -> PathBuf {
        self.out.join("stage1").join("vc.dysvc")
    }

    pub fn vae_checkpoint(&self) -> PathBuf {
        self.out.join("stage2").join("vae.dysvc")
    }

    pub fn stage1_converted_dir(&self, reference: &str) -> PathBuf {
        self.out.join("stage1").join("converted").join(reference)
    }

    pub fn stage2_restored_dir(&self, reference: &str) -> PathBuf {
        self.out.join("stage2").join("restored").join(reference)
    }

    pub fn synth_dir(&self, stage: Stage, reference: &str) -> PathBuf {
        self.out.join("synth").join(stage.as_str()).join(reference)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    pub fn scores_path(&self) -> PathBuf {
        self.report_dir().join("scores.csv")
    }

    fn feature_path(&self, record: &ManifestRecord) -> PathBuf {
        self.features_dir()
            .join(&record.speaker_id)
            .join(format!("{}.dysf", record.utt_id))
    }

    // ---- features -------------------------------------------------------

    /// Compute features for every manifest record that does not already have
    /// a cache entry. Returns the number of newly extracted utterances.
    pub fn extract_features(&self) -> Result<usize> {
        let pending: Vec<&ManifestRecord> = self
            .manifest
            .records()
            .iter()
            .filter(|r| !self.feature_path(r).is_file())
            .collect();
        let mels = crate::par::map_slice(&pending, |record| -> Result<MelSpectrogram> {
            let mut wave = load_wav(self.manifest.audio_path(record))?;
            if wave.sample_rate != self.config.features.sample_rate {
                wave = resample(&wave, self.config.features.sample_rate)?;
            }
            logmel(&wave, &self.config.features)
        });
        for (record, mel) in pending.iter().zip(mels) {
            let path = self.feature_path(record);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            save_features(&mel?, path)?;
        }
        Ok(pending.len())
    }

    fn load_feature(&self, record: &ManifestRecord) -> Result<MelSpectrogram> {
        let path = self.feature_path(record);
        if !path.is_file() {
            return Err(Error::Dependency(format!(
                "features for {}/{} not found at {}; run extract-features first",
                record.speaker_id,
                record.utt_id,
                path.display()
            )));
        }
        load_features(path, &self.config.features)
    }

    // ---- checkpoint plumbing -------------------------------------------

    fn checkpoint_current(&self, path: &Path, hash: &str) -> bool {
        read_sidecar_hash(path).as_deref() == Some(hash)
    }

    fn require_checkpoint(&self, path: &Path, hash: &str, producer: &str) -> Result<Vec<ParamRecord>> {
        if !path.is_file() {
            return Err(Error::Dependency(format!(
                "{} not found; run `{producer}` first",
                path.display()
            )));
        }
        match read_sidecar_hash(path) {
            Some(h) if h == hash => load_checkpoint(path),
            Some(_) => Err(Error::Dependency(format!(
                "{} was built from a different configuration; rerun `{producer}`",
                path.display()
            ))),
            None => Err(Error::Dependency(format!(
                "{} has no .meta sidecar recording its configuration; rerun `{producer}`",
                path.display()
            ))),
        }
    }

    fn save_phase_checkpoint<S: crate::nncore::Scalar>(
        &self,
        path: &Path,
        params: Vec<(String, usize, usize, Vec<S>)>,
        hash: &str,
    ) -> Result<()> {
        save_checkpoint(path, &records_from_params(params))?;
        write_sidecar_hash(path, hash)
    }

    // ---- model construction --------------------------------------------

    fn vocabulary(&self) -> Vocabulary {
        let inventory = self.manifest.token_inventory();
        Vocabulary::from_tokens(inventory.iter().map(String::as_str))
    }

    fn speaker_table(&self) -> SpeakerTable {
        let speakers = self.config.all_speakers();
        SpeakerTable::from_names(speakers.iter().map(String::as_str))
    }

    fn build_seq2seq(&self) -> Result<Seq2SeqModel<f32>> {
        Seq2SeqModel::new(
            self.config.seq2seq_config(),
            self.vocabulary(),
            self.speaker_table(),
            self.config.stage1.seed,
        )
    }

    fn restore_seq2seq(&self, checkpoint: &Path, producer: &str) -> Result<Seq2SeqModel<f32>> {
        let records = self.require_checkpoint(checkpoint, &self.config.stage1_hash(), producer)?;
        let mut model = self.build_seq2seq()?;
        model
            .engine_mut()
            .import_params(&records_to_params::<f32>(records))?;
        Ok(model)
    }

    /// The fully trained stage-1 model from this run's checkpoints.
    pub fn load_seq2seq(&self) -> Result<Seq2SeqModel<f32>> {
        self.restore_seq2seq(&self.vc_checkpoint(), "train-vc")
    }

    /// The trained stage-2 speaker model from this run's checkpoints.
    pub fn load_vae(&self) -> Result<VaeModel<f32>> {
        self.restore_vae("train-vae")
    }

    fn restore_vae(&self, producer: &str) -> Result<VaeModel<f32>> {
        let records = self.require_checkpoint(
            &self.vae_checkpoint(),
            &self.config.stage2_hash(),
            producer,
        )?;
        let mut model = VaeModel::new(
            self.config.vae_config(),
            self.speaker_table(),
            self.config.stage2.seed,
        )?;
        model
            .engine_mut()
            .import_params(&records_to_params::<f32>(records))?;
        Ok(model)
    }

    // ---- training data --------------------------------------------------

    /// Text-and-speech utterances for the given speakers and split.
    fn tts_data(&self, speakers: &[String], split: Split) -> Result<Vec<TtsUtterance>> {
        let mut out = Vec::new();
        for speaker in speakers {
            for record in self.manifest.select(speaker, split) {
                out.push(TtsUtterance {
                    utt_id: record.utt_id.clone(),
                    tokens: record.transcript.clone(),
                    speaker: speaker.clone(),
                    mel: self.load_feature(record)?,
                });
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyInput(format!(
                "no {split} utterances for speakers {speakers:?}"
            )));
        }
        Ok(out)
    }

    /// Parallel patient-to-reference pairs for one split.
    fn vc_pairs(&self, split: Split) -> Result<Vec<VcPair>> {
        let patient = self.config.corpus.patient.clone();
        let mut out = Vec::new();
        for reference in &self.config.corpus.references {
            let utts = self
                .manifest
                .parallel_utterances(&[patient.as_str(), reference.as_str()], split)?;
            for utt in utts {
                let src = self.manifest.get(&utt, &patient).expect("parallel utterance");
                let tgt = self.manifest.get(&utt, reference).expect("parallel utterance");
                out.push(VcPair {
                    utt_id: utt.clone(),
                    source_speaker: patient.clone(),
                    source: self.load_feature(src)?,
                    target_speaker: reference.clone(),
                    target: self.load_feature(tgt)?,
                });
            }
        }
        Ok(out)
    }

    /// Every training-split utterance of every configured speaker.
    fn vae_corpus(&self) -> Result<Vec<VaeUtterance>> {
        let mut out = Vec::new();
        for speaker in self.config.all_speakers() {
            for record in self.manifest.select(&speaker, Split::Train) {
                out.push(VaeUtterance {
                    utt_id: record.utt_id.clone(),
                    speaker: speaker.clone(),
                    mel: self.load_feature(record)?,
                });
            }
        }
        Ok(out)
    }

    fn fluent_speakers(&self) -> Vec<String> {
        let mut out = self.config.corpus.references.clone();
        out.extend(self.config.corpus.auxiliary.iter().cloned());
        out
    }

    // ---- stage-1 phases -------------------------------------------------

    /// Text-to-speech pretraining of the decoder stack on fluent speakers.
    pub fn run_pretrain_decoder(&self, force: bool) -> Result<PhaseStatus> {
        let path = self.decoder_checkpoint();
        let hash = self.config.stage1_hash();
        if !force && self.checkpoint_current(&path, &hash) {
            return Ok(PhaseStatus::Skipped);
        }
        let data = self.tts_data(&self.fluent_speakers(), Split::Train)?;
        let mut model = self.build_seq2seq()?;
        let opts = TrainOptions {
            epochs: self.config.stage1.decoder_epochs,
            learning_rate: self.config.stage1.learning_rate,
            seed: self.config.stage1.seed,
        };
        let records = pretrain_decoder(&mut model, &data, &opts)?;
        self.save_phase_checkpoint(&path, model.engine().export_params(), &hash)?;
        write_seq_losses(&self.out.join("stage1").join("losses_decoder.tsv"), &records)?;
        Ok(PhaseStatus::Completed)
    }

    /// Speech-encoder pretraining against the frozen decoder, on every
    /// configured speaker including the patient.
    pub fn run_pretrain_encoder(&self, force: bool) -> Result<PhaseStatus> {
        let path = self.encoder_checkpoint();
        let hash = self.config.stage1_hash();
        if !force && self.checkpoint_current(&path, &hash) {
            return Ok(PhaseStatus::Skipped);
        }
        let mut model = self.restore_seq2seq(&self.decoder_checkpoint(), "pretrain-decoder")?;
        let data = self.tts_data(&self.config.all_speakers(), Split::Train)?;
        let opts = TrainOptions {
            epochs: self.config.stage1.encoder_epochs,
            learning_rate: self.config.stage1.learning_rate,
            seed: self.config.stage1.seed.wrapping_add(1),
        };
        let records = pretrain_encoder(&mut model, &data, &opts)?;
        self.save_phase_checkpoint(&path, model.engine().export_params(), &hash)?;
        write_seq_losses(&self.out.join("stage1").join("losses_encoder.tsv"), &records)?;
        Ok(PhaseStatus::Completed)
    }

    /// Parallel conversion training, patient speech to each reference.
    pub fn run_train_vc(&self, force: bool) -> Result<PhaseStatus> {
        let path = self.vc_checkpoint();
        let hash = self.config.stage1_hash();
        if !force && self.checkpoint_current(&path, &hash) {
            return Ok(PhaseStatus::Skipped);
        }
        let mut model = self.restore_seq2seq(&self.encoder_checkpoint(), "pretrain-encoder")?;
        let train_pairs = self.vc_pairs(Split::Train)?;
        let val_pairs = self.vc_pairs(Split::Validation)?;
        let opts = TrainOptions {
            epochs: self.config.stage1.vc_epochs,
            learning_rate: self.config.stage1.learning_rate,
            seed: self.config.stage1.seed.wrapping_add(2),
        };
        let report = train_vc(&mut model, &train_pairs, &val_pairs, &opts)?;
        self.save_phase_checkpoint(&path, model.engine().export_params(), &hash)?;
        write_seq_losses(&self.out.join("stage1").join("losses_vc.tsv"), &report.records)?;
        Ok(PhaseStatus::Completed)
    }

    /// Convert every held-out patient utterance to every reference speaker.
    pub fn run_convert_stage1(&self) -> Result<ConvertStats> {
        let mut model = self.restore_seq2seq(&self.vc_checkpoint(), "train-vc")?;
        let patient = self.config.corpus.patient.clone();
        let mut stats = ConvertStats::default();
        for reference in &self.config.corpus.references {
            let dir = self.stage1_converted_dir(reference);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let utts = self
                .manifest
                .parallel_utterances(&[patient.as_str(), reference.as_str()], Split::Test)?;
            for utt in utts {
                let record = self.manifest.get(&utt, &patient).expect("parallel utterance");
                let source = self.load_feature(record)?;
                let outcome = model.convert(&source, &patient, reference)?;
                if outcome.truncated {
                    stats.truncated += 1;
                }
                save_features(&outcome.mel, dir.join(format!("{utt}.dysf")))?;
                stats.converted += 1;
            }
        }
        Ok(stats)
    }

    // ---- stage-2 phases -------------------------------------------------

    /// Train the frame-wise speaker model on all speakers' training speech.
    pub fn run_train_vae(&self, force: bool) -> Result<PhaseStatus> {
        let path = self.vae_checkpoint();
        let hash = self.config.stage2_hash();
        if !force && self.checkpoint_current(&path, &hash) {
            return Ok(PhaseStatus::Skipped);
        }
        let corpus = self.vae_corpus()?;
        let mut model: VaeModel<f32> = VaeModel::new(
            self.config.vae_config(),
            self.speaker_table(),
            self.config.stage2.seed,
        )?;
        let opts = TrainOptions {
            epochs: self.config.stage2.epochs,
            learning_rate: self.config.stage2.learning_rate,
            seed: self.config.stage2.seed,
        };
        let records = train_vae(&mut model, &corpus, &opts)?;
        self.save_phase_checkpoint(&path, model.engine().export_params(), &hash)?;
        write_vae_losses(&self.out.join("stage2").join("losses_vae.tsv"), &records)?;
        Ok(PhaseStatus::Completed)
    }

    /// Re-target stage-1 outputs back to the patient's identity.
    pub fn run_convert_stage2(&self) -> Result<ConvertStats> {
        let mut model = self.restore_vae("train-vae")?;
        let patient = self.config.corpus.patient.clone();
        let mut stats = ConvertStats::default();
        for reference in &self.config.corpus.references {
            let src_dir = self.stage1_converted_dir(reference);
            let dst_dir = self.stage2_restored_dir(reference);
            std::fs::create_dir_all(&dst_dir).map_err(|e| Error::io(&dst_dir, e))?;
            let utts = self.manifest.parallel_utterances(
                &[patient.as_str(), reference.as_str()],
                Split::Test,
            )?;
            for utt in utts {
                let src = src_dir.join(format!("{utt}.dysf"));
                if !src.is_file() {
                    return Err(Error::Dependency(format!(
                        "stage-1 output {} not found; run convert (stage 1) first",
                        src.display()
                    )));
                }
                let mel = load_features(&src, &self.config.features)?;
                let restored = model.convert_speaker(&mel, &patient, DecodeMode::Mean)?;
                save_features(&restored, dst_dir.join(format!("{utt}.dysf")))?;
                stats.converted += 1;
            }
        }
        Ok(stats)
    }

    // ---- synthesis ------------------------------------------------------

    /// Render stage-1 and stage-2 outputs to waveforms.
    pub fn run_synthesize(&self) -> Result<usize> {
        let mut rendered = 0;
        let iterations = self.config.synthesis.griffin_lim_iterations;
        let seed = self.config.synthesis.seed;
        for reference in &self.config.corpus.references {
            for (stage, src_dir) in [
                (Stage::Vtn, self.stage1_converted_dir(reference)),
                (Stage::VtnVae, self.stage2_restored_dir(reference)),
            ] {
                if !src_dir.is_dir() {
                    return Err(Error::Dependency(format!(
                        "{} not found; run the conversion phases first",
                        src_dir.display()
                    )));
                }
                let out_dir = self.synth_dir(stage, reference);
                std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
                let mut entries: Vec<PathBuf> = std::fs::read_dir(&src_dir)
                    .map_err(|e| Error::io(&src_dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "dysf"))
                    .collect();
                entries.sort();
                for path in entries {
                    let mel = load_features(&path, &self.config.features)?;
                    let mag = mel_to_magnitude(&mel, &self.config.features)?;
                    let wave = griffin_lim(&mag, iterations, seed)?;
                    let stem = path.file_stem().expect("dysf file").to_string_lossy();
                    save_wav(&wave, out_dir.join(format!("{stem}.wav")))?;
                    rendered += 1;
                }
            }
        }
        Ok(rendered)
    }

    // ---- evaluation -----------------------------------------------------

    /// Mean DTW-aligned cepstral distortion between two feature sets given
    /// by (reference, converted) pairs.
    fn mean_mcd(&self, pairs: &[(MelSpectrogram, MelSpectrogram)]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("no utterance pairs to score".into()));
        }
        let order = self.config.eval.mcd_order;
        let scores = crate::par::map_slice(pairs, |(reference, converted)| -> Result<f64> {
            let a = mel_cepstrum(reference, order)?;
            let b = mel_cepstrum(converted, order)?;
            crate::eval::mcd(&a, &b)
        });
        let mut total = 0.0;
        for s in &scores {
            total += *s.as_ref().map_err(|e| Error::Dependency(e.to_string()))?;
        }
        Ok(total / scores.len() as f64)
    }

    /// Corpus-level syllable error rate of a hypothesis transcript file
    /// against the manifest transcripts for one speaker's test utterances.
    fn stage_ser(&self, stage: Stage, reference: &str) -> Result<f64> {
        let path = self
            .manifest
            .base_dir()
            .join("hyp")
            .join(stage.as_str())
            .join(format!("{reference}.tsv"));
        if !path.is_file() {
            return Err(Error::Dependency(format!(
                "recognition transcripts {} not found (expected hyp/<stage>/<speaker>.tsv \
                 beside the manifest)",
                path.display()
            )));
        }
        let hyp = load_transcripts(&path)?;
        let mut edits = 0usize;
        let mut length = 0usize;
        let mut scored = 0usize;
        for (utt, tokens) in &hyp {
            let record = self.manifest.get(utt, reference).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}: hypothesis utterance {utt} does not exist for speaker {reference}",
                    path.display()
                ))
            })?;
            if record.split != Split::Test {
                continue;
            }
            let got = syllable_error_rate(&record.transcript, tokens)?;
            edits += got.edits();
            length += got.reference_length;
            scored += 1;
        }
        if scored == 0 {
            return Err(Error::EmptyInput(format!(
                "{}: no test-split utterances to score",
                path.display()
            )));
        }
        Ok(100.0 * edits as f64 / length as f64)
    }

    /// Assemble the per-speaker score table over all three stages and write
    /// `report/scores.csv`.
    ///
    /// Cepstral distortion is measured against the signal each stage tries
    /// to match: the raw-source and stage-1 rows compare against the
    /// reference speaker's recording of the same sentence, while the
    /// stage-2 row compares against the patient's own recording, since that
    /// stage's job is to restore the patient's identity.
    pub fn run_evaluate(&self) -> Result<SpeakerScoreTable> {
        let patient = self.config.corpus.patient.clone();
        let mut table = SpeakerScoreTable::new();
        for reference in &self.config.corpus.references {
            let utts = self
                .manifest
                .parallel_utterances(&[patient.as_str(), reference.as_str()], Split::Test)?;

            let mut raw_pairs = Vec::new();
            let mut vtn_pairs = Vec::new();
            let mut vae_pairs = Vec::new();
            for utt in &utts {
                let p_mel =
                    self.load_feature(self.manifest.get(utt, &patient).expect("parallel"))?;
                let r_mel =
                    self.load_feature(self.manifest.get(utt, reference).expect("parallel"))?;
                let s1 = self.stage1_converted_dir(reference).join(format!("{utt}.dysf"));
                let s2 = self.stage2_restored_dir(reference).join(format!("{utt}.dysf"));
                for (path, phase) in [(&s1, "convert (stage 1)"), (&s2, "convert (stage 2)")] {
                    if !path.is_file() {
                        return Err(Error::Dependency(format!(
                            "{} not found; run `{phase}` first",
                            path.display()
                        )));
                    }
                }
                let s1_mel = load_features(&s1, &self.config.features)?;
                let s2_mel = load_features(&s2, &self.config.features)?;
                raw_pairs.push((r_mel.clone(), p_mel.clone()));
                vtn_pairs.push((r_mel, s1_mel));
                vae_pairs.push((p_mel, s2_mel));
            }

            let gender = self.config.corpus.gender_of(reference);
            for (stage, pairs) in [
                (Stage::Dysarthric, &raw_pairs),
                (Stage::Vtn, &vtn_pairs),
                (Stage::VtnVae, &vae_pairs),
            ] {
                table.push(SpeakerScore {
                    speaker: reference.clone(),
                    gender: gender.clone(),
                    stage,
                    mcd_db: self.mean_mcd(pairs)?,
                    ser_pct: self.stage_ser(stage, reference)?,
                })?;
            }
        }
        let dir = self.report_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_scores_csv(&table, self.scores_path())?;
        Ok(table)
    }

    /// All phases in dependency order; returns the final score table.
    pub fn run_all(&self, force: bool) -> Result<SpeakerScoreTable> {
        self.extract_features()?;
        self.run_pretrain_decoder(force)?;
        self.run_pretrain_encoder(force)?;
        self.run_train_vc(force)?;
        self.run_convert_stage1()?;
        self.run_train_vae(force)?;
        self.run_convert_stage2()?;
        self.run_synthesize()?;
        self.run_evaluate()
    }
}

fn write_tsv(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) const SEQ_LOSS_HEADER: &str = "epoch\ttotal\tl1\tstop\tvalidation";
pub(crate) const VAE_LOSS_HEADER: &str = "epoch\ttotal\trecon\tkl\tcyc\tadv_enc\tadv_cls";

fn write_seq_losses(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut text = String::from(SEQ_LOSS_HEADER);
    text.push('\n');
    for r in records {
        let val = r.validation.map(|v| v.to_string()).unwrap_or_default();
        text.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.epoch, r.total, r.l1, r.stop, val));
    }
    write_tsv(path, &text)
}

fn write_vae_losses(path: &Path, records: &[VaeLossRecord]) -> Result<()> {
    let mut text = String::from(VAE_LOSS_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.epoch, r.total, r.recon, r.kl, r.cyc, r.adv_enc, r.adv_cls
        ));
    }
    write_tsv(path, &text)
}
