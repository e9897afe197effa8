//! Nonparallel training for the frame-wise VAE: reconstruction + KL +
//! cyclic + adversarial objective with 1:1 alternating updates between the
//! converter (encoder/decoder/speaker table) and the speaker classifier.
//!
//! Loss-log columns: epoch, recon, kl, cyc, adv_enc, adv_cls.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nncore::{Adam, AdamConfig, Engine, Linear, Scalar, Tensor, Var};
use crate::seq2seq::train::TrainOptions;
use crate::vae::model::{DecodeMode, VaeModel};

/// One labelled utterance of the nonparallel corpus.
pub struct VaeUtterance {
    pub utt_id: String,
    pub speaker: String,
    pub mel: MelSpectrogram,
}

/// Per-epoch averages of every loss component. `total` is the converter
/// objective `recon + λ_kl·kl + λ_cyc·cyc + λ_adv·adv_enc`.
#[derive(Debug, Clone, Copy)]
pub struct VaeLossRecord {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub cyc: f64,
    pub adv_enc: f64,
    pub adv_cls: f64,
}

/// Scalar nodes of one converter-side loss evaluation; `total` is the
/// weighted sum that gets backpropagated.
pub struct GeneratorLoss {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub cyc: Option<Var>,
    pub adv: Option<Var>,
}

/// Build the converter-side loss graph for one utterance. `cyc_target` is
/// the speaker the cyclic path detours through; `sample_seed` drives the
/// reparameterized draw on the reconstruction path (the cyclic path uses
/// mean latents).
pub fn generator_loss_graph<S: Scalar>(
    model: &mut VaeModel<S>,
    mel: &MelSpectrogram,
    speaker: usize,
    cyc_target: usize,
    sample_seed: u64,
) -> Result<GeneratorLoss> {
    let cfg = *model.config();
    let t = mel.frames();
    let x = model.leaf_of(mel)?;
    let (mu, lv) = model.posterior_graph(x)?;

    // reconstruction path: reparameterized sample
    let mode = DecodeMode::Sample { seed: sample_seed };
    let z1 = model.latent_from(mu, lv, mode)?;
    let kl = {
        let k = model.kl_graph(mu, lv, t)?;
        if cfg.second_stage {
            // the deeper stage contributes its own KL on the sampled latent
            let (mu2, lv2) = model.stage2_posterior_graph(z1)?.expect("second stage");
            let k2 = model.kl_graph(mu2, lv2, t)?;
            model.engine_mut().add(k, k2)?
        } else {
            k
        }
    };
    let zdec = model.decoder_latent(z1, mode)?;
    let y = model.decode_graph(zdec, speaker, t)?;
    let recon = {
        let eng = model.engine_mut();
        let diff = eng.sub(y, x)?;
        let a = eng.abs(diff)?;
        eng.mean_all(a)?
    };

    // cyclic path: x -> other speaker -> back, mean latents throughout
    let cyc = if cfg.lambda_cyc > 0.0 {
        let zc = model.decoder_latent(mu, DecodeMode::Mean)?;
        let y_other = model.decode_graph(zc, cyc_target, t)?;
        let (mu_c, _lv_c) = model.posterior_graph(y_other)?;
        let zc2 = model.decoder_latent(mu_c, DecodeMode::Mean)?;
        let y_back = model.decode_graph(zc2, speaker, t)?;
        let eng = model.engine_mut();
        let diff = eng.sub(y_back, x)?;
        let a = eng.abs(diff)?;
        Some(eng.mean_all(a)?)
    } else {
        None
    };

    // adversarial path: push the classifier toward maximum entropy
    let adv = if cfg.lambda_adv > 0.0 {
        let logits = model.classifier_graph(mu)?;
        Some(model.engine_mut().neg_entropy_mean(logits)?)
    } else {
        None
    };

    let eng = model.engine_mut();
    let mut total = recon;
    let klw = eng.mul_scalar(kl, S::from_f64(cfg.lambda_kl))?;
    total = eng.add(total, klw)?;
    if let Some(c) = cyc {
        let cw = eng.mul_scalar(c, S::from_f64(cfg.lambda_cyc))?;
        total = eng.add(total, cw)?;
    }
    if let Some(a) = adv {
        let aw = eng.mul_scalar(a, S::from_f64(cfg.lambda_adv))?;
        total = eng.add(total, aw)?;
    }
    Ok(GeneratorLoss {
        total,
        recon,
        kl,
        cyc,
        adv,
    })
}

/// Build the classifier-side loss graph: cross-entropy on detached latents.
pub fn classifier_loss_graph<S: Scalar>(
    model: &mut VaeModel<S>,
    mel: &MelSpectrogram,
    speaker: usize,
) -> Result<Var> {
    let t = mel.frames();
    let x = model.leaf_of(mel)?;
    let (mu, _lv) = model.posterior_graph(x)?;
    let mu_d = model.engine_mut().detach(mu)?;
    let logits = model.classifier_graph(mu_d)?;
    let classes = vec![speaker; t];
    model.engine_mut().cross_entropy_mean(logits, &classes)
}

/// Train the VAE on a nonparallel corpus. The cyclic and adversarial terms
/// need at least two distinct speakers; with both weights at zero the model
/// degenerates to a plain (variational) autoencoder and a single speaker is
/// allowed.
pub fn train_vae<S: Scalar>(
    model: &mut VaeModel<S>,
    corpus: &[VaeUtterance],
    opts: &TrainOptions,
) -> Result<Vec<VaeLossRecord>> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus".into()));
    }
    let cfg = *model.config();
    let labels: Vec<usize> = corpus
        .iter()
        .map(|u| model.speakers().index(&u.speaker))
        .collect::<Result<_>>()?;
    let distinct = {
        let mut l = labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 2 && (cfg.lambda_cyc > 0.0 || cfg.lambda_adv > 0.0) {
        return Err(Error::InvalidArgument(
            "cyclic and adversarial losses need at least two speakers; \
             set their weights to zero for single-speaker training"
                .into(),
        ));
    }
    model.fit_feature_stats(corpus.iter().map(|u| &u.mel))?;

    let n_speakers = model.speakers().len();
    let mut gen_opt: Adam<S> = Adam::for_prefixes(
        AdamConfig {
            learning_rate: opts.learning_rate,
            ..Default::default()
        },
        &["venc.", "vdec.", "vspk."],
    );
    let mut cls_opt: Adam<S> = Adam::for_prefixes(
        AdamConfig {
            learning_rate: opts.learning_rate,
            ..Default::default()
        },
        &["vcls."],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut records = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng);
        let (mut recon, mut kl, mut cyc, mut adv_enc, mut adv_cls, mut total) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for &i in &order {
            let u = &corpus[i];
            let s = labels[i];
            let cyc_target = (s + 1) % n_speakers;
            let sample_seed: u64 = rng.random();

            // converter update
            model.engine_mut().reset();
            let loss = generator_loss_graph(model, &u.mel, s, cyc_target, sample_seed)?;
            {
                let eng = model.engine_mut();
                recon += eng.scalar_value(loss.recon).to_f64();
                kl += eng.scalar_value(loss.kl).to_f64();
                if let Some(c) = loss.cyc {
                    cyc += eng.scalar_value(c).to_f64();
                }
                if let Some(a) = loss.adv {
                    adv_enc += eng.scalar_value(a).to_f64();
                }
                total += eng.scalar_value(loss.total).to_f64();
                eng.backward(loss.total)?;
            }
            gen_opt.step(model.engine_mut())?;

            // classifier update (1:1 alternation)
            if cfg.lambda_adv > 0.0 {
                model.engine_mut().reset();
                let ce = classifier_loss_graph(model, &u.mel, s)?;
                adv_cls += model.engine_mut().scalar_value(ce).to_f64();
                model.engine_mut().backward(ce)?;
                cls_opt.step(model.engine_mut())?;
            }
        }
        model.engine_mut().reset();
        let n = corpus.len() as f64;
        records.push(VaeLossRecord {
            epoch,
            total: total / n,
            recon: recon / n,
            kl: kl / n,
            cyc: cyc / n,
            adv_enc: adv_enc / n,
            adv_cls: adv_cls / n,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    pub epochs: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            epochs: 200,
            hidden: 32,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

/// Train a small stand-alone speaker classifier on fixed feature rows and
/// report its final training-set accuracy. Used as the post-hoc probe that
/// quantifies how speaker-discriminative a representation is.
pub fn train_speaker_probe(
    features: &[Vec<f32>],
    labels: &[usize],
    n_classes: usize,
    opts: &ProbeOptions,
) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptyInput("probe features".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("probe features must share one dimension".into()));
    }
    if n_classes < 2 || labels.iter().any(|&l| l >= n_classes) {
        return Err(Error::InvalidArgument(
            "probe labels must fall in 0..n_classes with n_classes >= 2".into(),
        ));
    }

    let mut eng: Engine<f32> = Engine::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let fc1 = Linear::new(&mut eng, "probe.fc1", dim, opts.hidden, &mut rng)?;
    let out = Linear::new(&mut eng, "probe.out", opts.hidden, n_classes, &mut rng)?;
    let flat: Vec<f32> = features.iter().flatten().copied().collect();
    let x_data = Tensor::from_vec(features.len(), dim, flat)?;

    let mut opt: Adam<f32> = Adam::new(AdamConfig {
        learning_rate: opts.learning_rate,
        ..Default::default()
    });
    for _ in 0..opts.epochs {
        eng.reset();
        let x = eng.leaf(x_data.clone())?;
        let h = fc1.forward(&mut eng, x)?;
        let h = eng.relu(h)?;
        let logits = out.forward(&mut eng, h)?;
        let ce = eng.cross_entropy_mean(logits, labels)?;
        eng.backward(ce)?;
        opt.step(&mut eng)?;
    }

    eng.reset();
    let x = eng.leaf(x_data)?;
    let h = fc1.forward(&mut eng, x)?;
    let h = eng.relu(h)?;
    let logits = out.forward(&mut eng, h)?;
    let vals = eng.value(logits);
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row = &vals.data()[r * n_classes..(r + 1) * n_classes];
        let mut best = 0usize;
        for (k, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = k;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}
