//! End-to-end orchestration: corpus manifests, configuration, checkpoints,
//! synthetic corpus generation, run phases, and report emission.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod report;
pub mod run;
pub mod synth;

pub use checkpoint::{
    load_checkpoint, read_sidecar_hash, records_from_params, records_to_params, save_checkpoint,
    write_sidecar_hash, ParamRecord, CHECKPOINT_MAGIC,
};
pub use config::{
    cache_root, file_hash, CorpusConfig, EvalConfig, PipelineConfig, Stage1Config, Stage2Config,
    SynthesisConfig,
};
pub use manifest::{write_manifest, CorpusManifest, ManifestRecord, Split, SPLITS};
pub use report::{emit_report, Provenance, RunReport, MERGED_LOSS_HEADER};
pub use run::{ConvertStats, PhaseStatus, Runner};
pub use synth::{generate_corpus, CorpusSpec, GeneratedCorpus, STAGES};
