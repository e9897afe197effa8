//! Synthetic three-speaker parallel corpus for end-to-end exercises.
//!
//! Speaker `p` plays the impaired source: slower articulation, unstable
//! pitch, steep spectral tilt, extra breath noise. Speakers `r1` and `r2`
//! are fluent references with distinct pitch, vocal-tract scale, and tilt.
//! Every speaker records the same utterance list (shared syllable content),
//! so source/target pairs line up by utterance id.
//!
//! Alongside audio and a manifest, the generator writes mock recognition
//! transcripts for the three listening conditions (`dysarthric` raw source,
//! `vtn` after stage 1, `vtn+vae` after stage 2) with condition-specific
//! error rates, and a downsized pipeline configuration tuned so a full run
//! stays inside a small CPU budget.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{save_wav, Waveform};
use crate::error::{Error, Result};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::manifest::{write_manifest, ManifestRecord, Split};

/// Listening conditions mock transcripts are generated for, in pipeline
/// order: raw source, after stage 1, after both stages.
pub const STAGES: [&str; 3] = ["dysarthric", "vtn", "vtn+vae"];

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub utterances_per_speaker: usize,
    pub seed: u64,
    pub sample_rate: u32,
    /// Nominal per-syllable duration before speaker rate scaling.
    pub syllable_seconds: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            utterances_per_speaker: 60,
            seed: 2024,
            sample_rate: 16_000,
            syllable_seconds: 0.16,
        }
    }
}

/// What [`generate_corpus`] produced.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub root: PathBuf,
    pub manifest_path: PathBuf,
    pub config_path: PathBuf,
    pub utterance_ids: Vec<String>,
}

struct SpeakerProfile {
    id: &'static str,
    gender: &'static str,
    f0_hz: f64,
    /// Harmonic rolloff exponent; larger = darker spectrum.
    tilt: f64,
    /// Vocal-tract length factor scaling formant centers.
    vt_scale: f64,
    /// Duration multiplier; > 1 = slower.
    rate: f64,
    /// Random-walk pitch instability.
    jitter: f64,
    noise: f64,
}

const SPEAKERS: [SpeakerProfile; 3] = [
    SpeakerProfile {
        id: "p",
        gender: "F",
        f0_hz: 112.0,
        tilt: 1.6,
        vt_scale: 0.88,
        rate: 1.3,
        jitter: 0.06,
        noise: 0.02,
    },
    SpeakerProfile {
        id: "r1",
        gender: "F",
        f0_hz: 212.0,
        tilt: 0.8,
        vt_scale: 1.12,
        rate: 1.0,
        jitter: 0.006,
        noise: 0.004,
    },
    SpeakerProfile {
        id: "r2",
        gender: "M",
        f0_hz: 160.0,
        tilt: 0.95,
        vt_scale: 1.06,
        rate: 0.95,
        jitter: 0.009,
        noise: 0.006,
    },
];

/// Romanized syllables with tone digits; index order fixes their acoustics.
const SYLLABLES: [&str; 10] = [
    "ni3", "hao3", "ma1", "shi4", "de5", "wo3", "men2", "tian1", "qi4", "zhong1",
];

/// Per-condition token corruption probability for each reference listener
/// block, shaped so stage 1 helps a lot and stage 2 trades a little
/// intelligibility back: (stage, r1 rate, r2 rate).
const HYP_RATES: [(&str, f64, f64); 3] = [
    ("dysarthric", 0.85, 0.88),
    ("vtn", 0.42, 0.52),
    ("vtn+vae", 0.48, 0.62),
];

fn sub_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        x = x.wrapping_add(p).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x ^= x >> 27;
        x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

/// Assign splits by utterance index so the assignment is parallel across
/// speakers: 7/10 train, 1/10 validation, 2/10 test.
fn split_for(idx: usize) -> Split {
    match idx % 10 {
        7 => Split::Validation,
        8 | 9 => Split::Test,
        _ => Split::Train,
    }
}

struct Syllable {
    /// Plain syllable pitch level relative to the speaker's base.
    f0_mult: f64,
    formant_hz: f64,
    dur_mult: f64,
    tone: u8,
}

fn syllable(idx: usize) -> Syllable {
    let tone = SYLLABLES[idx]
        .bytes()
        .last()
        .map(|b| b - b'0')
        .expect("inventory tokens end with a tone digit");
    Syllable {
        f0_mult: 0.82 + 0.045 * idx as f64,
        formant_hz: 500.0 + 240.0 * idx as f64,
        dur_mult: if tone == 5 { 0.7 } else { 0.92 + 0.02 * idx as f64 },
        tone,
    }
}

/// Pitch trajectory of a tone over normalized time `u` in [0, 1].
fn tone_contour(tone: u8, u: f64) -> f64 {
    match tone {
        1 => 1.15,
        2 => 0.9 + 0.25 * u,
        3 => {
            // dip then recover
            if u < 0.5 {
                0.95 - 0.3 * u
            } else {
                0.8 + 0.4 * (u - 0.5)
            }
        }
        4 => 1.2 - 0.35 * u,
        _ => 0.95,
    }
}

/// Shared content of one utterance: a short syllable sequence drawn from a
/// content-only RNG so every speaker realizes the same tokens.
fn utterance_content(spec: &CorpusSpec, utt_idx: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, &[1, utt_idx as u64]));
    let len = rng.random_range(2..=4);
    (0..len).map(|_| rng.random_range(0..SYLLABLES.len())).collect()
}

fn render_utterance(
    spec: &CorpusSpec,
    profile: &SpeakerProfile,
    content: &[usize],
    utt_idx: usize,
) -> Waveform {
    let sr = spec.sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
        spec.seed,
        &[2, utt_idx as u64, profile.f0_hz.to_bits()],
    ));
    let edge = (0.05 * sr) as usize;
    let gap = (0.03 * profile.rate * sr) as usize;
    let mut samples: Vec<f32> = vec![0.0; edge];

    let mut jitter_state = 0.0f64;
    for (si, &syl_idx) in content.iter().enumerate() {
        if si > 0 {
            samples.extend(std::iter::repeat_n(0.0, gap));
        }
        let syl = syllable(syl_idx);
        let dur = spec.syllable_seconds * syl.dur_mult * profile.rate;
        let n = (dur * sr) as usize;
        let formant = syl.formant_hz * profile.vt_scale;
        let n_harm = ((0.45 * sr) / profile.f0_hz).floor().min(30.0) as usize;
        let mut phase = 0.0f64;
        let fade = ((0.025 * sr) as usize).min(n / 2);
        for t in 0..n {
            let u = t as f64 / n as f64;
            jitter_state += profile.jitter * (rng.random::<f64>() - 0.5);
            jitter_state *= 0.995;
            let f0 = profile.f0_hz * syl.f0_mult * tone_contour(syl.tone, u) * (1.0 + jitter_state);
            phase += 2.0 * std::f64::consts::PI * f0 / sr;
            let mut v = 0.0f64;
            for k in 1..=n_harm {
                let fk = k as f64 * profile.f0_hz * syl.f0_mult;
                if fk >= 0.48 * sr {
                    break;
                }
                let d = (fk - formant) / 320.0;
                let gain = (k as f64).powf(-profile.tilt) * (1.0 + 2.2 * (-d * d).exp());
                v += gain * (phase * k as f64).sin();
            }
            let env = if t < fade {
                0.5 - 0.5 * (std::f64::consts::PI * t as f64 / fade as f64).cos()
            } else if t + fade > n {
                0.5 - 0.5 * (std::f64::consts::PI * (n - t) as f64 / fade as f64).cos()
            } else {
                1.0
            };
            samples.push((0.25 * env * v) as f32);
        }
    }
    samples.extend(std::iter::repeat_n(0.0, edge));

    for s in samples.iter_mut() {
        *s += (profile.noise * (rng.random::<f64>() * 2.0 - 1.0)) as f32;
    }
    let peak = samples.iter().fold(0.0f32, |m, &v| m.max(v.abs())).max(1e-6);
    let scale = 0.45 / peak;
    for s in samples.iter_mut() {
        *s *= scale;
    }
    Waveform::new(samples, spec.sample_rate).expect("synthesized samples are finite")
}

fn corrupt_tokens(tokens: &[String], rate: f64, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        if rng.random::<f64>() >= rate {
            out.push(tok.clone());
            continue;
        }
        match rng.random_range(0..10) {
            0 | 1 => {} // deletion
            2 | 3 => {
                // insertion after a kept token
                out.push(tok.clone());
                out.push(SYLLABLES[rng.random_range(0..SYLLABLES.len())].to_string());
            }
            _ => {
                // substitution with a different syllable
                let mut pick = tok.clone();
                while &pick == tok {
                    pick = SYLLABLES[rng.random_range(0..SYLLABLES.len())].to_string();
                }
                out.push(pick);
            }
        }
    }
    if out.is_empty() {
        // Keep hypotheses nonempty so error rates stay well-defined per line.
        out.push(SYLLABLES[rng.random_range(0..SYLLABLES.len())].to_string());
    }
    out
}

/// Downsized configuration for the generated corpus: small model widths and
/// epoch counts so the whole two-stage pipeline runs quickly on a CPU.
fn toy_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.features.sample_rate = 16_000;
    cfg.features.n_mels = 20;
    cfg.features.hop_samples = 256;
    cfg.features.window_samples = 512;
    cfg.features.fft_size = 512;
    cfg.features.fmin_hz = 60.0;
    cfg.features.fmax_hz = 7600.0;

    cfg.stage1.width = 64;
    cfg.stage1.heads = 2;
    cfg.stage1.encoder_layers = 1;
    cfg.stage1.decoder_layers = 1;
    cfg.stage1.ffn_hidden = 128;
    cfg.stage1.reduction = 2;
    cfg.stage1.decoder_epochs = 30;
    cfg.stage1.encoder_epochs = 12;
    cfg.stage1.vc_epochs = 60;

    cfg.stage2.hidden = 48;
    cfg.stage2.latent_dim = 4;
    cfg.stage2.speaker_dim = 8;
    cfg.stage2.classifier_hidden = 48;
    cfg.stage2.lambda_adv = 1.0;
    cfg.stage2.epochs = 60;

    cfg.eval.mcd_order = 12;

    cfg.corpus.patient = "p".into();
    cfg.corpus.references = vec!["r1".into(), "r2".into()];
    for sp in &SPEAKERS {
        cfg.corpus.genders.insert(sp.id.into(), sp.gender.into());
    }
    cfg
}

/// Generate the corpus under `root`: `wav/<speaker>/<utt>.wav`,
/// `manifest.jsonl`, `hyp/<stage>/<speaker>.tsv`, and `config.ini`.
pub fn generate_corpus(root: impl AsRef<Path>, spec: &CorpusSpec) -> Result<GeneratedCorpus> {
    let root = root.as_ref();
    if spec.utterances_per_speaker == 0 {
        return Err(Error::InvalidArgument(
            "utterances_per_speaker must be positive".into(),
        ));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let utterance_ids: Vec<String> = (0..spec.utterances_per_speaker)
        .map(|i| format!("u{:03}", i + 1))
        .collect();

    let mut records = Vec::new();
    for profile in &SPEAKERS {
        let dir = root.join("wav").join(profile.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (idx, utt_id) in utterance_ids.iter().enumerate() {
            let content = utterance_content(spec, idx);
            let wave = render_utterance(spec, profile, &content, idx);
            let rel = PathBuf::from("wav").join(profile.id).join(format!("{utt_id}.wav"));
            save_wav(&wave, root.join(&rel))?;
            records.push(ManifestRecord {
                utt_id: utt_id.clone(),
                speaker_id: profile.id.to_string(),
                audio_path: rel,
                transcript: content
                    .iter()
                    .map(|&i| SYLLABLES[i].to_string())
                    .collect(),
                split: split_for(idx),
            });
        }
    }
    let manifest_path = root.join("manifest.jsonl");
    write_manifest(&manifest_path, &records)?;

    // Mock recognition outputs per condition and reference listener block,
    // covering test-split utterances only.
    for (stage_idx, &(stage, r1_rate, r2_rate)) in HYP_RATES.iter().enumerate() {
        let dir = root.join("hyp").join(stage);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (spk_idx, (spk, rate)) in [("r1", r1_rate), ("r2", r2_rate)].into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
                spec.seed,
                &[3, stage_idx as u64, spk_idx as u64],
            ));
            let mut lines = String::new();
            for (idx, utt_id) in utterance_ids.iter().enumerate() {
                if split_for(idx) != Split::Test {
                    continue;
                }
                let reference: Vec<String> = utterance_content(spec, idx)
                    .iter()
                    .map(|&i| SYLLABLES[i].to_string())
                    .collect();
                let hyp = corrupt_tokens(&reference, rate, &mut rng);
                lines.push_str(&format!("{utt_id}\t{}\n", hyp.join(" ")));
            }
            let path = dir.join(format!("{spk}.tsv"));
            std::fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
        }
    }

    let config_path = root.join("config.ini");
    toy_config().save(&config_path)?;

    Ok(GeneratedCorpus {
        root: root.to_path_buf(),
        manifest_path,
        config_path,
        utterance_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::load_wav;
    use crate::eval::{load_transcripts, syllable_error_rate};
    use crate::pipeline::manifest::CorpusManifest;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            utterances_per_speaker: 10,
            seed: 5,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn generates_a_loadable_parallel_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let gen = generate_corpus(dir.path(), &small_spec()).unwrap();
        let manifest = CorpusManifest::load(&gen.manifest_path).unwrap();
        assert_eq!(manifest.records().len(), 30);
        assert_eq!(manifest.speakers(), vec!["p", "r1", "r2"]);
        let test_ids = manifest
            .parallel_utterances(&["p", "r1", "r2"], Split::Test)
            .unwrap();
        assert_eq!(test_ids, vec!["u009", "u010"]);
        let train_ids = manifest
            .parallel_utterances(&["p", "r1", "r2"], Split::Train)
            .unwrap();
        assert_eq!(train_ids.len(), 7);
    }

    #[test]
    fn audio_is_real_and_source_is_slower() {
        let dir = tempfile::tempdir().unwrap();
        let gen = generate_corpus(dir.path(), &small_spec()).unwrap();
        let p = load_wav(gen.root.join("wav/p/u001.wav")).unwrap();
        let r1 = load_wav(gen.root.join("wav/r1/u001.wav")).unwrap();
        assert_eq!(p.sample_rate, 16_000);
        let energy: f32 = p.samples.iter().map(|v| v * v).sum();
        assert!(energy > 0.1, "patient audio nearly silent: {energy}");
        // Same syllables, but the source speaker articulates ~1.3x slower.
        let ratio = p.samples.len() as f64 / r1.samples.len() as f64;
        assert!(ratio > 1.1, "expected slower source, ratio {ratio}");
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let spec = small_spec();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_corpus(a.path(), &spec).unwrap();
        generate_corpus(b.path(), &spec).unwrap();
        for rel in ["manifest.jsonl", "wav/p/u003.wav", "hyp/vtn/r1.tsv", "config.ini"] {
            assert_eq!(
                std::fs::read(a.path().join(rel)).unwrap(),
                std::fs::read(b.path().join(rel)).unwrap(),
                "{rel} differs between runs"
            );
        }
    }

    #[test]
    fn hypothesis_error_rates_order_by_stage() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            utterances_per_speaker: 50,
            seed: 5,
            ..CorpusSpec::default()
        };
        let gen = generate_corpus(dir.path(), &spec).unwrap();
        let manifest = CorpusManifest::load(&gen.manifest_path).unwrap();
        let mut rates = Vec::new();
        for stage in STAGES {
            let hyp = load_transcripts(gen.root.join(format!("hyp/{stage}/r1.tsv"))).unwrap();
            let mut refs = Vec::new();
            let mut hyps = Vec::new();
            for (utt, toks) in &hyp {
                let rec = manifest.get(utt, "r1").unwrap();
                refs.extend(rec.transcript.iter().cloned());
                hyps.extend(toks.iter().cloned());
            }
            rates.push(syllable_error_rate(&refs, &hyps).unwrap().rate);
        }
        // raw > stage 2 > stage 1
        assert!(rates[0] > rates[2] && rates[2] > rates[1], "{rates:?}");
        assert!(rates[0] > 60.0, "{rates:?}");
        assert!(rates[1] < 60.0, "{rates:?}");
    }

    #[test]
    fn config_is_loadable_and_names_the_speakers() {
        let dir = tempfile::tempdir().unwrap();
        let gen = generate_corpus(dir.path(), &small_spec()).unwrap();
        let cfg = PipelineConfig::load(&gen.config_path).unwrap();
        assert_eq!(cfg.corpus.patient, "p");
        assert_eq!(cfg.corpus.references, vec!["r1", "r2"]);
        assert_eq!(cfg.corpus.gender_of("r2"), "M");
        let manifest = CorpusManifest::load(&gen.manifest_path).unwrap();
        cfg.validate_speakers(&manifest.speakers()).unwrap();
    }
}
