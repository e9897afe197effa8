//! Pipeline configuration: a plain-text file of `[section]` headers and
//! `key = value` lines. Unknown sections and keys are hard errors so typos
//! fail fast. The canonical serialization (fixed section and key order,
//! `Display` formatting) feeds the SHA-256 hashes that key checkpoint and
//! feature caching.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dsp::FeatureConfig;
use crate::error::{Error, Result};
use crate::seq2seq::Seq2SeqConfig;
use crate::vae::VaeConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Config {
    pub width: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_hidden: usize,
    pub reduction: usize,
    pub stop_pos_weight: f64,
    pub stop_threshold: f64,
    pub ratio_cap: f64,
    pub max_positions: usize,
    pub learning_rate: f64,
    pub decoder_epochs: usize,
    pub encoder_epochs: usize,
    pub vc_epochs: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
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
            decoder_epochs: 30,
            encoder_epochs: 20,
            vc_epochs: 30,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Config {
    pub hidden: usize,
    pub latent_dim: usize,
    pub speaker_dim: usize,
    pub classifier_hidden: usize,
    pub second_stage: bool,
    pub second_latent_dim: usize,
    pub lambda_kl: f64,
    pub lambda_cyc: f64,
    pub lambda_adv: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
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
            epochs: 60,
            seed: 23,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusConfig {
    /// Dysarthric source speaker.
    pub patient: String,
    /// Healthy reference (conversion target) speakers, in evaluation order.
    pub references: Vec<String>,
    /// Extra nonparallel speakers that only join stage-2 training.
    pub auxiliary: Vec<String>,
    /// Optional speaker -> gender tags for reports ("U" when absent).
    pub genders: BTreeMap<String, String>,
}

impl CorpusConfig {
    pub fn gender_of(&self, speaker: &str) -> String {
        self.genders
            .get(speaker)
            .cloned()
            .unwrap_or_else(|| "U".to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Cepstral order used for MCD.
    pub mcd_order: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { mcd_order: 24 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub griffin_lim_iterations: usize,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            griffin_lim_iterations: 60,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub corpus: CorpusConfig,
    pub eval: EvalConfig,
    pub synthesis: SynthesisConfig,
}

fn parse<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| {
        Error::InvalidArgument(format!(
            "[{section}] {key}: cannot parse {value:?} as {}",
            std::any::type_name::<T>()
        ))
    })
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidArgument(format!(
            "[{section}] {key}: cannot parse {value:?} as bool (true/false)"
        ))),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_genders(section: &str, key: &str, value: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for item in parse_list(value) {
        let (spk, g) = item.split_once(':').ok_or_else(|| {
            Error::InvalidArgument(format!(
                "[{section}] {key}: entry {item:?} must be speaker:gender"
            ))
        })?;
        map.insert(spk.trim().to_string(), g.trim().to_string());
    }
    Ok(map)
}

const SECTIONS: [&str; 6] = [
    "features",
    "stage1",
    "stage2",
    "corpus",
    "eval",
    "synthesis",
];

impl PipelineConfig {
    /// Parse a config file over the defaults. Unknown sections/keys error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let line_no = idx + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::InvalidArgument(format!("line {line_no}: unterminated section header"))
                })?;
                if !SECTIONS.contains(&name) {
                    return Err(Error::InvalidArgument(format!(
                        "line {line_no}: unknown section [{name}]; allowed: {}",
                        SECTIONS.join(", ")
                    )));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {line_no}: expected `key = value`"))
            })?;
            let key = key.trim();
            let value = value.trim();
            let sec = section.as_deref().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "line {line_no}: `{key}` appears before any [section] header"
                ))
            })?;
            cfg.set(sec, key, value).map_err(|e| {
                Error::InvalidArgument(format!("line {line_no}: {e}"))
            })?;
        }
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let unknown = |allowed: &[&str]| {
            Err(Error::InvalidArgument(format!(
                "unknown key `{key}` in [{section}]; allowed: {}",
                allowed.join(", ")
            )))
        };
        match section {
            "features" => {
                let allowed = [
                    "sample_rate",
                    "n_mels",
                    "hop_samples",
                    "window_samples",
                    "fft_size",
                    "fmin_hz",
                    "fmax_hz",
                ];
                let f = &mut self.features;
                match key {
                    "sample_rate" => f.sample_rate = parse(section, key, value)?,
                    "n_mels" => f.n_mels = parse(section, key, value)?,
                    "hop_samples" => f.hop_samples = parse(section, key, value)?,
                    "window_samples" => f.window_samples = parse(section, key, value)?,
                    "fft_size" => f.fft_size = parse(section, key, value)?,
                    "fmin_hz" => f.fmin_hz = parse(section, key, value)?,
                    "fmax_hz" => f.fmax_hz = parse(section, key, value)?,
                    _ => return unknown(&allowed),
                }
            }
            "stage1" => {
                let allowed = [
                    "width",
                    "heads",
                    "encoder_layers",
                    "decoder_layers",
                    "ffn_hidden",
                    "reduction",
                    "stop_pos_weight",
                    "stop_threshold",
                    "ratio_cap",
                    "max_positions",
                    "learning_rate",
                    "decoder_epochs",
                    "encoder_epochs",
                    "vc_epochs",
                    "seed",
                ];
                let s = &mut self.stage1;
                match key {
                    "width" => s.width = parse(section, key, value)?,
                    "heads" => s.heads = parse(section, key, value)?,
                    "encoder_layers" => s.encoder_layers = parse(section, key, value)?,
                    "decoder_layers" => s.decoder_layers = parse(section, key, value)?,
                    "ffn_hidden" => s.ffn_hidden = parse(section, key, value)?,
                    "reduction" => s.reduction = parse(section, key, value)?,
                    "stop_pos_weight" => s.stop_pos_weight = parse(section, key, value)?,
                    "stop_threshold" => s.stop_threshold = parse(section, key, value)?,
                    "ratio_cap" => s.ratio_cap = parse(section, key, value)?,
                    "max_positions" => s.max_positions = parse(section, key, value)?,
                    "learning_rate" => s.learning_rate = parse(section, key, value)?,
                    "decoder_epochs" => s.decoder_epochs = parse(section, key, value)?,
                    "encoder_epochs" => s.encoder_epochs = parse(section, key, value)?,
                    "vc_epochs" => s.vc_epochs = parse(section, key, value)?,
                    "seed" => s.seed = parse(section, key, value)?,
                    _ => return unknown(&allowed),
                }
            }
            "stage2" => {
                let allowed = [
                    "hidden",
                    "latent_dim",
                    "speaker_dim",
                    "classifier_hidden",
                    "second_stage",
                    "second_latent_dim",
                    "lambda_kl",
                    "lambda_cyc",
                    "lambda_adv",
                    "learning_rate",
                    "epochs",
                    "seed",
                ];
                let s = &mut self.stage2;
                match key {
                    "hidden" => s.hidden = parse(section, key, value)?,
                    "latent_dim" => s.latent_dim = parse(section, key, value)?,
                    "speaker_dim" => s.speaker_dim = parse(section, key, value)?,
                    "classifier_hidden" => s.classifier_hidden = parse(section, key, value)?,
                    "second_stage" => s.second_stage = parse_bool(section, key, value)?,
                    "second_latent_dim" => s.second_latent_dim = parse(section, key, value)?,
                    "lambda_kl" => s.lambda_kl = parse(section, key, value)?,
                    "lambda_cyc" => s.lambda_cyc = parse(section, key, value)?,
                    "lambda_adv" => s.lambda_adv = parse(section, key, value)?,
                    "learning_rate" => s.learning_rate = parse(section, key, value)?,
                    "epochs" => s.epochs = parse(section, key, value)?,
                    "seed" => s.seed = parse(section, key, value)?,
                    _ => return unknown(&allowed),
                }
            }
            "corpus" => {
                let allowed = ["patient", "references", "auxiliary", "genders"];
                let c = &mut self.corpus;
                match key {
                    "patient" => c.patient = value.to_string(),
                    "references" => c.references = parse_list(value),
                    "auxiliary" => c.auxiliary = parse_list(value),
                    "genders" => c.genders = parse_genders(section, key, value)?,
                    _ => return unknown(&allowed),
                }
            }
            "eval" => match key {
                "mcd_order" => self.eval.mcd_order = parse(section, key, value)?,
                _ => return unknown(&["mcd_order"]),
            },
            "synthesis" => match key {
                "griffin_lim_iterations" => {
                    self.synthesis.griffin_lim_iterations = parse(section, key, value)?
                }
                "seed" => self.synthesis.seed = parse(section, key, value)?,
                _ => return unknown(&["griffin_lim_iterations", "seed"]),
            },
            _ => unreachable!("sections validated before dispatch"),
        }
        Ok(())
    }

    fn canonical_features(&self) -> String {
        let f = &self.features;
        format!(
            "[features]\nsample_rate = {}\nn_mels = {}\nhop_samples = {}\nwindow_samples = {}\nfft_size = {}\nfmin_hz = {}\nfmax_hz = {}\n",
            f.sample_rate, f.n_mels, f.hop_samples, f.window_samples, f.fft_size, f.fmin_hz, f.fmax_hz
        )
    }

    fn canonical_stage1(&self) -> String {
        let s = &self.stage1;
        format!(
            "[stage1]\nwidth = {}\nheads = {}\nencoder_layers = {}\ndecoder_layers = {}\nffn_hidden = {}\nreduction = {}\nstop_pos_weight = {}\nstop_threshold = {}\nratio_cap = {}\nmax_positions = {}\nlearning_rate = {}\ndecoder_epochs = {}\nencoder_epochs = {}\nvc_epochs = {}\nseed = {}\n",
            s.width, s.heads, s.encoder_layers, s.decoder_layers, s.ffn_hidden, s.reduction,
            s.stop_pos_weight, s.stop_threshold, s.ratio_cap, s.max_positions, s.learning_rate,
            s.decoder_epochs, s.encoder_epochs, s.vc_epochs, s.seed
        )
    }

    fn canonical_stage2(&self) -> String {
        let s = &self.stage2;
        format!(
            "[stage2]\nhidden = {}\nlatent_dim = {}\nspeaker_dim = {}\nclassifier_hidden = {}\nsecond_stage = {}\nsecond_latent_dim = {}\nlambda_kl = {}\nlambda_cyc = {}\nlambda_adv = {}\nlearning_rate = {}\nepochs = {}\nseed = {}\n",
            s.hidden, s.latent_dim, s.speaker_dim, s.classifier_hidden, s.second_stage,
            s.second_latent_dim, s.lambda_kl, s.lambda_cyc, s.lambda_adv, s.learning_rate,
            s.epochs, s.seed
        )
    }

    fn canonical_corpus(&self) -> String {
        let c = &self.corpus;
        let genders: Vec<String> = c
            .genders
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect();
        format!(
            "[corpus]\npatient = {}\nreferences = {}\nauxiliary = {}\ngenders = {}\n",
            c.patient,
            c.references.join(","),
            c.auxiliary.join(","),
            genders.join(",")
        )
    }

    fn canonical_eval(&self) -> String {
        format!("[eval]\nmcd_order = {}\n", self.eval.mcd_order)
    }

    fn canonical_synthesis(&self) -> String {
        format!(
            "[synthesis]\ngriffin_lim_iterations = {}\nseed = {}\n",
            self.synthesis.griffin_lim_iterations, self.synthesis.seed
        )
    }

    /// Stable full serialization; re-parsing it reproduces the config.
    pub fn canonical(&self) -> String {
        [
            self.canonical_features(),
            self.canonical_stage1(),
            self.canonical_stage2(),
            self.canonical_corpus(),
            self.canonical_eval(),
            self.canonical_synthesis(),
        ]
        .join("\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.canonical()).map_err(|e| Error::io(path, e))
    }

    /// Hash of the whole config.
    pub fn config_hash(&self) -> String {
        sha_hex(self.canonical().as_bytes())
    }

    /// Hash governing stage-1 checkpoints: features + stage1 + corpus.
    /// Stage-2 settings deliberately do not participate, so stage-2 edits
    /// never invalidate stage-1 artifacts.
    pub fn stage1_hash(&self) -> String {
        sha_hex(
            format!(
                "{}{}{}",
                self.canonical_features(),
                self.canonical_stage1(),
                self.canonical_corpus()
            )
            .as_bytes(),
        )
    }

    /// Hash governing stage-2 checkpoints: features + stage2 + corpus.
    pub fn stage2_hash(&self) -> String {
        sha_hex(
            format!(
                "{}{}{}",
                self.canonical_features(),
                self.canonical_stage2(),
                self.canonical_corpus()
            )
            .as_bytes(),
        )
    }

    /// Hash governing extracted features (feature section only).
    pub fn feature_hash(&self) -> String {
        sha_hex(self.canonical_features().as_bytes())
    }

    /// Model hyperparameters for the stage-1 converter.
    pub fn seq2seq_config(&self) -> Seq2SeqConfig {
        let s = &self.stage1;
        Seq2SeqConfig {
            mel_dim: self.features.n_mels,
            width: s.width,
            heads: s.heads,
            encoder_layers: s.encoder_layers,
            decoder_layers: s.decoder_layers,
            ffn_hidden: s.ffn_hidden,
            reduction: s.reduction,
            stop_pos_weight: s.stop_pos_weight,
            stop_threshold: s.stop_threshold,
            ratio_cap: s.ratio_cap,
            max_positions: s.max_positions,
            learning_rate: s.learning_rate,
        }
    }

    /// Model hyperparameters for the stage-2 converter.
    pub fn vae_config(&self) -> VaeConfig {
        let s = &self.stage2;
        VaeConfig {
            mel_dim: self.features.n_mels,
            hidden: s.hidden,
            latent_dim: s.latent_dim,
            speaker_dim: s.speaker_dim,
            classifier_hidden: s.classifier_hidden,
            second_stage: s.second_stage,
            second_latent_dim: s.second_latent_dim,
            lambda_kl: s.lambda_kl,
            lambda_cyc: s.lambda_cyc,
            lambda_adv: s.lambda_adv,
            learning_rate: s.learning_rate,
        }
    }

    /// All speakers the pipeline touches: patient, references, auxiliary.
    pub fn all_speakers(&self) -> Vec<String> {
        let mut out = vec![self.corpus.patient.clone()];
        out.extend(self.corpus.references.iter().cloned());
        out.extend(self.corpus.auxiliary.iter().cloned());
        out
    }

    /// Check that the corpus section is populated and that every referenced
    /// speaker exists in the manifest speaker list.
    pub fn validate_speakers(&self, manifest_speakers: &[String]) -> Result<()> {
        if self.corpus.patient.is_empty() {
            return Err(Error::InvalidArgument(
                "[corpus] patient must be set".into(),
            ));
        }
        if self.corpus.references.is_empty() {
            return Err(Error::InvalidArgument(
                "[corpus] references must list at least one speaker".into(),
            ));
        }
        for spk in self.all_speakers() {
            if !manifest_speakers.contains(&spk) {
                return Err(Error::UnknownSpeaker(format!(
                    "{spk} (configured but absent from the manifest)"
                )));
            }
        }
        if self.corpus.references.contains(&self.corpus.patient) {
            return Err(Error::InvalidArgument(
                "[corpus] patient cannot also be a reference".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn sha_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a file's contents, for provenance records.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    let path: &Path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha_hex(&bytes))
}

/// Resolve the cache root: `DYSVC_CACHE_DIR` if set, else `<out>/cache`.
pub fn cache_root(out_dir: &Path) -> PathBuf {
    match std::env::var_os("DYSVC_CACHE_DIR") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => out_dir.join("cache"),
    }
}
