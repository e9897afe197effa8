//! Stage-2 speaker converter: a frame-wise variational autoencoder.
//!
//! Every network in this module consumes and produces exactly one frame per
//! row with identical arithmetic per row, which makes frame-permutation
//! equivariance an exact, bit-level property rather than an approximation.
//!
//! Parameter prefixes: `venc.*` encoder, `vdec.*` decoder, `vspk.*` speaker
//! table, `vcls.*` adversarial speaker classifier, `vfeat.*` non-trainable
//! feature statistics.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nncore::{Embedding, Engine, Linear, Scalar, Tensor, Var};
use crate::seq2seq::text::SpeakerTable;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeConfig {
    pub mel_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub speaker_dim: usize,
    pub classifier_hidden: usize,
    /// Optional second latent stage (a deeper stochastic layer); off by
    /// default.
    pub second_stage: bool,
    pub second_latent_dim: usize,
    pub lambda_kl: f64,
    pub lambda_cyc: f64,
    pub lambda_adv: f64,
    pub learning_rate: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            mel_dim: 80,
            hidden: 128,
            latent_dim: 8,
            speaker_dim: 16,
            classifier_hidden: 32,
            second_stage: false,
            second_latent_dim: 4,
            lambda_kl: 0.1,
            lambda_cyc: 1.0,
            lambda_adv: 0.1,
            learning_rate: 1e-3,
        }
    }
}

/// Per-frame Gaussian posterior over the latent space: `T x L` means and
/// log-variances (the latter clamped to `[-10, 10]`).
pub struct LatentPosterior<S: Scalar> {
    pub mean: Tensor<S>,
    pub log_variance: Tensor<S>,
}

impl<S: Scalar> LatentPosterior<S> {
    pub fn frames(&self) -> usize {
        self.mean.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.cols()
    }
}

/// Mean over frames of the closed-form KL divergence to the standard normal
/// prior: per frame `0.5 * sum_l (mu^2 + sigma^2 - log sigma^2 - 1)`.
pub fn kl_to_standard_normal<S: Scalar>(post: &LatentPosterior<S>) -> f64 {
    let t = post.frames();
    let mut total = 0.0f64;
    for (&m, &lv) in post.mean.data().iter().zip(post.log_variance.data()) {
        let mu = m.to_f64();
        let lv = lv.to_f64();
        total += mu * mu + lv.exp() - lv - 1.0;
    }
    0.5 * total / t as f64
}

/// How the latent is realized at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Use the posterior mean; fully deterministic.
    Mean,
    /// Reparameterized sample with a seeded generator; deterministic for a
    /// fixed seed.
    Sample { seed: u64 },
}

pub struct VaeModel<S: Scalar> {
    cfg: VaeConfig,
    eng: Engine<S>,
    speakers: SpeakerTable,
    enc_fc: Linear,
    enc_mu: Linear,
    enc_logvar: Linear,
    enc_mu2: Option<Linear>,
    enc_logvar2: Option<Linear>,
    dec_expand2: Option<Linear>,
    dec_fc: Linear,
    dec_out: Linear,
    spk: Embedding,
    cls_fc: Linear,
    cls_out: Linear,
    feat_mean: Var,
    feat_std: Var,
}

/// `n` standard-normal draws via Box-Muller on the given generator.
pub(crate) fn standard_normals<S: Scalar>(n: usize, rng: &mut ChaCha8Rng) -> Vec<S> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        out.push(S::from_f64(r * theta.cos()));
        out.push(S::from_f64(r * theta.sin()));
    }
    out.truncate(n);
    out
}

impl<S: Scalar> VaeModel<S> {
    pub fn new(cfg: VaeConfig, speakers: SpeakerTable, seed: u64) -> Result<Self> {
        if speakers.is_empty() {
            return Err(Error::EmptyInput("speaker table".into()));
        }
        if cfg.latent_dim == 0 || cfg.hidden == 0 || cfg.mel_dim == 0 {
            return Err(Error::InvalidArgument(
                "latent, hidden, and feature dimensions must be positive".into(),
            ));
        }
        let mut eng = Engine::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_fc = Linear::new(&mut eng, "venc.fc1", cfg.mel_dim, cfg.hidden, &mut rng)?;
        let enc_mu = Linear::new(&mut eng, "venc.mu", cfg.hidden, cfg.latent_dim, &mut rng)?;
        let enc_logvar = Linear::new(&mut eng, "venc.logvar", cfg.hidden, cfg.latent_dim, &mut rng)?;
        let (enc_mu2, enc_logvar2, dec_expand2) = if cfg.second_stage {
            (
                Some(Linear::new(
                    &mut eng,
                    "venc.mu2",
                    cfg.latent_dim,
                    cfg.second_latent_dim,
                    &mut rng,
                )?),
                Some(Linear::new(
                    &mut eng,
                    "venc.logvar2",
                    cfg.latent_dim,
                    cfg.second_latent_dim,
                    &mut rng,
                )?),
                Some(Linear::new(
                    &mut eng,
                    "vdec.expand2",
                    cfg.second_latent_dim,
                    cfg.latent_dim,
                    &mut rng,
                )?),
            )
        } else {
            (None, None, None)
        };
        let dec_fc = Linear::new(
            &mut eng,
            "vdec.fc1",
            cfg.latent_dim + cfg.speaker_dim,
            cfg.hidden,
            &mut rng,
        )?;
        let dec_out = Linear::new(&mut eng, "vdec.out", cfg.hidden, cfg.mel_dim, &mut rng)?;
        let spk = Embedding::new(&mut eng, "vspk", speakers.len(), cfg.speaker_dim, &mut rng)?;
        let cls_fc = Linear::new(
            &mut eng,
            "vcls.fc1",
            cfg.latent_dim,
            cfg.classifier_hidden,
            &mut rng,
        )?;
        let cls_out = Linear::new(
            &mut eng,
            "vcls.out",
            cfg.classifier_hidden,
            speakers.len(),
            &mut rng,
        )?;
        let feat_mean = eng.add_param("vfeat.mean", Tensor::zeros(1, cfg.mel_dim), false)?;
        let feat_std = eng.add_param(
            "vfeat.std",
            Tensor::from_vec(1, cfg.mel_dim, vec![S::one(); cfg.mel_dim])?,
            false,
        )?;
        Ok(VaeModel {
            cfg,
            eng,
            speakers,
            enc_fc,
            enc_mu,
            enc_logvar,
            enc_mu2,
            enc_logvar2,
            dec_expand2,
            dec_fc,
            dec_out,
            spk,
            cls_fc,
            cls_out,
            feat_mean,
            feat_std,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.cfg
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

    pub fn fit_feature_stats<'a, I: IntoIterator<Item = &'a MelSpectrogram>>(
        &mut self,
        mels: I,
    ) -> Result<()> {
        let d = self.cfg.mel_dim;
        let (mean, std) = crate::dsp::per_dim_stats(mels, d)?;
        let mean: Vec<S> = mean.into_iter().map(S::from_f64).collect();
        let std: Vec<S> = std.into_iter().map(S::from_f64).collect();
        self.eng.load_param("vfeat.mean", 1, d, mean)?;
        self.eng.load_param("vfeat.std", 1, d, std)?;
        Ok(())
    }

    fn stats(&self) -> (Vec<S>, Vec<S>) {
        (
            self.eng.value(self.feat_mean).data().to_vec(),
            self.eng.value(self.feat_std).data().to_vec(),
        )
    }

    /// Normalized input leaf, `T x D`.
    pub(crate) fn leaf_of(&mut self, mel: &MelSpectrogram) -> Result<Var> {
        if mel.dims() != self.cfg.mel_dim {
            return Err(Error::Shape(format!(
                "mel dim {} vs model {}",
                mel.dims(),
                self.cfg.mel_dim
            )));
        }
        let (mean, std) = self.stats();
        let d = self.cfg.mel_dim;
        let mut data = Vec::with_capacity(mel.frames() * d);
        for t in 0..mel.frames() {
            for (j, &v) in mel.row(t).iter().enumerate() {
                data.push((S::from_f64(v as f64) - mean[j]) / std[j]);
            }
        }
        self.eng.leaf(Tensor::from_vec(mel.frames(), d, data)?)
    }

    /// First-stage posterior graph: (mu, clamped log-variance), each `T x L`.
    pub(crate) fn posterior_graph(&mut self, x: Var) -> Result<(Var, Var)> {
        let h = self.enc_fc.forward(&mut self.eng, x)?;
        let h = self.eng.relu(h)?;
        let mu = self.enc_mu.forward(&mut self.eng, h)?;
        let lv = self.enc_logvar.forward(&mut self.eng, h)?;
        let lv = self
            .eng
            .clamp(lv, S::from_f64(LOGVAR_MIN), S::from_f64(LOGVAR_MAX))?;
        Ok((mu, lv))
    }

    /// Second-stage posterior over the first-stage latent, when enabled.
    pub(crate) fn stage2_posterior_graph(&mut self, z1: Var) -> Result<Option<(Var, Var)>> {
        match (&self.enc_mu2, &self.enc_logvar2) {
            (Some(mu2), Some(lv2)) => {
                let m = mu2.forward(&mut self.eng, z1)?;
                let l = lv2.forward(&mut self.eng, z1)?;
                let l = self
                    .eng
                    .clamp(l, S::from_f64(LOGVAR_MIN), S::from_f64(LOGVAR_MAX))?;
                Ok(Some((m, l)))
            }
            _ => Ok(None),
        }
    }

    /// Realize a latent from a posterior: the mean, or a reparameterized
    /// sample `mu + sigma * eps` with seeded standard-normal noise.
    pub(crate) fn latent_from(&mut self, mu: Var, logvar: Var, mode: DecodeMode) -> Result<Var> {
        match mode {
            DecodeMode::Mean => Ok(mu),
            DecodeMode::Sample { seed } => {
                let (rows, cols) = {
                    let t = self.eng.value(mu);
                    (t.rows(), t.cols())
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let eps = standard_normals::<S>(rows * cols, &mut rng);
                let eps = self.eng.leaf(Tensor::from_vec(rows, cols, eps)?)?;
                let half = self.eng.mul_scalar(logvar, S::from_f64(0.5))?;
                let sd = self.eng.exp(half)?;
                let jitter = self.eng.mul(sd, eps)?;
                self.eng.add(mu, jitter)
            }
        }
    }

    /// Map a first-stage latent through the optional second stage, returning
    /// the latent the decoder actually consumes.
    pub(crate) fn decoder_latent(&mut self, z1: Var, mode: DecodeMode) -> Result<Var> {
        if !self.cfg.second_stage {
            return Ok(z1);
        }
        let (mu2, lv2) = self
            .stage2_posterior_graph(z1)?
            .expect("second stage enabled");
        let mode2 = match mode {
            DecodeMode::Mean => DecodeMode::Mean,
            DecodeMode::Sample { seed } => DecodeMode::Sample {
                seed: seed.wrapping_add(1),
            },
        };
        let z2 = self.latent_from(mu2, lv2, mode2)?;
        self.dec_expand2
            .as_ref()
            .expect("second stage enabled")
            .forward(&mut self.eng, z2)
    }

    /// Decode a `T x L` latent to `T x D` normalized frames for a speaker.
    pub(crate) fn decode_graph(&mut self, z: Var, speaker: usize, frames: usize) -> Result<Var> {
        let ids = vec![speaker; frames];
        let spk_rows = self.eng.embed(self.spk.table, &ids)?;
        let joined = self.eng.concat_cols(&[z, spk_rows])?;
        let h = self.dec_fc.forward(&mut self.eng, joined)?;
        let h = self.eng.relu(h)?;
        self.dec_out.forward(&mut self.eng, h)
    }

    /// Speaker-classifier logits (`T x n_speakers`) over latent rows.
    pub(crate) fn classifier_graph(&mut self, z: Var) -> Result<Var> {
        let h = self.cls_fc.forward(&mut self.eng, z)?;
        let h = self.eng.relu(h)?;
        self.cls_out.forward(&mut self.eng, h)
    }

    /// Closed-form KL graph term: mean over frames of the per-frame KL to the
    /// standard normal.
    pub(crate) fn kl_graph(&mut self, mu: Var, logvar: Var, frames: usize) -> Result<Var> {
        let musq = self.eng.mul(mu, mu)?;
        let var = self.eng.exp(logvar)?;
        let a = self.eng.add(musq, var)?;
        let b = self.eng.sub(a, logvar)?;
        let c = self.eng.add_scalar(b, S::from_f64(-1.0))?;
        let s = self.eng.sum_all(c)?;
        self.eng.mul_scalar(s, S::from_f64(0.5 / frames as f64))
    }

    /// Encode a spectrogram to its per-frame posterior. Pure: the tape is
    /// reset before and after.
    pub fn encode(&mut self, mel: &MelSpectrogram) -> Result<LatentPosterior<S>> {
        self.eng.reset();
        let x = self.leaf_of(mel)?;
        let (mu, lv) = self.posterior_graph(x)?;
        let post = LatentPosterior {
            mean: self.eng.value(mu).clone(),
            log_variance: self.eng.value(lv).clone(),
        };
        self.eng.reset();
        Ok(post)
    }

    fn run_convert(
        &mut self,
        mel: &MelSpectrogram,
        target: usize,
        mode: DecodeMode,
    ) -> Result<MelSpectrogram> {
        self.eng.reset();
        let t = mel.frames();
        let x = self.leaf_of(mel)?;
        let (mu, lv) = self.posterior_graph(x)?;
        let z1 = self.latent_from(mu, lv, mode)?;
        let z = self.decoder_latent(z1, mode)?;
        let y = self.decode_graph(z, target, t)?;
        let (mean, std) = self.stats();
        let d = self.cfg.mel_dim;
        let vals = self.eng.value(y).data().to_vec();
        self.eng.reset();
        let mut data = Vec::with_capacity(t * d);
        for (i, v) in vals.into_iter().enumerate() {
            let j = i % d;
            data.push((v * std[j] + mean[j]).to_f64() as f32);
        }
        MelSpectrogram::new(
            t,
            d,
            data,
            mel.hop_seconds,
            mel.window_seconds,
            mel.sample_rate,
        )
    }

    /// Re-target speaker identity: same frame count, converted timbre.
    pub fn convert_speaker(
        &mut self,
        mel: &MelSpectrogram,
        target: &str,
        mode: DecodeMode,
    ) -> Result<MelSpectrogram> {
        let idx = self.speakers.index(target)?;
        self.run_convert(mel, idx, mode)
    }

    /// Round trip through the latent space with the source's own speaker.
    pub fn reconstruct(
        &mut self,
        mel: &MelSpectrogram,
        speaker: &str,
        mode: DecodeMode,
    ) -> Result<MelSpectrogram> {
        self.convert_speaker(mel, speaker, mode)
    }

    /// Frame-level accuracy of the internal adversarial classifier on the
    /// posterior means of the given labelled utterances.
    pub fn classifier_accuracy(&mut self, items: &[(&MelSpectrogram, usize)]) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::EmptyInput("classifier accuracy set".into()));
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for (mel, label) in items {
            self.eng.reset();
            let x = self.leaf_of(mel)?;
            let (mu, _lv) = self.posterior_graph(x)?;
            let logits = self.classifier_graph(mu)?;
            let vals = self.eng.value(logits);
            let n = vals.cols();
            for r in 0..vals.rows() {
                let row = &vals.data()[r * n..(r + 1) * n];
                let mut best = 0usize;
                for (k, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = k;
                    }
                }
                if best == *label {
                    correct += 1;
                }
                total += 1;
            }
            self.eng.reset();
        }
        Ok(correct as f64 / total as f64)
    }
}
