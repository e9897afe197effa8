//! Command-line front end for the two-stage conversion pipeline.
//!
//! Every subcommand maps to one pipeline phase; `run` chains them all.
//! Exit codes: 0 success, 3 corrupted artifact (checkpoint/feature file),
//! 2 any other failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dysvc::error::Error;
use dysvc::eval::{load_scores_csv, rank_reference_speakers, Criterion, Stage};
use dysvc::pipeline::{
    emit_report, generate_corpus, CorpusSpec, PhaseStatus, PipelineConfig, Runner,
};

#[derive(Parser)]
#[command(
    name = "dysvc",
    version,
    about = "Two-stage voice conversion for dysarthric speech: sequence \
             conversion to a fluent reference, then frame-wise speaker \
             restoration, with objective evaluation."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Arguments shared by every phase that works inside a run directory.
#[derive(Args)]
struct PhaseArgs {
    /// Pipeline configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory for checkpoints and outputs.
    #[arg(long)]
    out: PathBuf,
}

impl PhaseArgs {
    fn runner(&self) -> Result<Runner, Error> {
        Runner::from_paths(&self.config, &self.manifest, &self.out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic three-speaker parallel corpus with config,
    /// manifest, audio, and mock recognition transcripts.
    GenCorpus {
        /// Corpus directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Utterances per speaker.
        #[arg(long, default_value_t = 60)]
        utterances: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Compute log-mel features for every manifest utterance (cached).
    ExtractFeatures(PhaseArgs),
    /// Stage 1, phase A: text-to-speech pretraining of the decoder.
    PretrainDecoder {
        #[command(flatten)]
        phase: PhaseArgs,
        /// Retrain even if a current checkpoint exists.
        #[arg(long)]
        force: bool,
    },
    /// Stage 1, phase B: speech-encoder pretraining against the frozen
    /// decoder.
    PretrainEncoder {
        #[command(flatten)]
        phase: PhaseArgs,
        #[arg(long)]
        force: bool,
    },
    /// Stage 1, phase C: parallel conversion training.
    TrainVc {
        #[command(flatten)]
        phase: PhaseArgs,
        #[arg(long)]
        force: bool,
    },
    /// Stage 2: train the frame-wise speaker model.
    TrainVae {
        #[command(flatten)]
        phase: PhaseArgs,
        #[arg(long)]
        force: bool,
    },
    /// Convert held-out utterances: stage 1 re-times the patient's speech
    /// into each reference voice; stage 2 restores the patient's identity.
    Convert {
        #[command(flatten)]
        phase: PhaseArgs,
        /// Which conversion to run (1, 2, or both).
        #[arg(long, default_value = "both")]
        stage: ConvertStage,
    },
    /// Render converted features to waveforms.
    Synthesize(PhaseArgs),
    /// Score all stages (cepstral distortion + syllable error rate) and
    /// write report/scores.csv.
    Evaluate(PhaseArgs),
    /// Rank reference speakers from an existing scores.csv.
    RankSpeakers {
        /// Path to a scores.csv written by `evaluate`.
        #[arg(long)]
        scores: PathBuf,
        /// mcd or ser.
        #[arg(long)]
        criterion: String,
        /// Stage to rank on (dysarthric, vtn, vtn+vae).
        #[arg(long, default_value = "vtn+vae")]
        stage: String,
    },
    /// Emit losses.tsv, scatter.csv, summary.txt, and provenance.json.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// All phases in order, then the report.
    Run {
        #[command(flatten)]
        phase: PhaseArgs,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ConvertStage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

fn describe(status: PhaseStatus, what: &str) {
    match status {
        PhaseStatus::Completed => println!("{what}: completed"),
        PhaseStatus::Skipped => println!("{what}: up to date, skipped"),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenCorpus { out, utterances, seed } => {
            let spec = CorpusSpec {
                utterances_per_speaker: utterances,
                seed,
                ..CorpusSpec::default()
            };
            let generated = generate_corpus(&out, &spec)?;
            println!(
                "corpus: {} utterances x 3 speakers under {}",
                generated.utterance_ids.len(),
                generated.root.display()
            );
            println!("manifest: {}", generated.manifest_path.display());
            println!("config:  {}", generated.config_path.display());
        }
        Command::ExtractFeatures(phase) => {
            let runner = phase.runner()?;
            let n = runner.extract_features()?;
            println!("features: {n} newly extracted into {}", runner.features_dir().display());
        }
        Command::PretrainDecoder { phase, force } => {
            describe(phase.runner()?.run_pretrain_decoder(force)?, "pretrain-decoder");
        }
        Command::PretrainEncoder { phase, force } => {
            describe(phase.runner()?.run_pretrain_encoder(force)?, "pretrain-encoder");
        }
        Command::TrainVc { phase, force } => {
            describe(phase.runner()?.run_train_vc(force)?, "train-vc");
        }
        Command::TrainVae { phase, force } => {
            describe(phase.runner()?.run_train_vae(force)?, "train-vae");
        }
        Command::Convert { phase, stage } => {
            let runner = phase.runner()?;
            if stage != ConvertStage::Two {
                let stats = runner.run_convert_stage1()?;
                println!(
                    "stage 1: converted {} utterances ({} truncated at the length cap)",
                    stats.converted, stats.truncated
                );
            }
            if stage != ConvertStage::One {
                let stats = runner.run_convert_stage2()?;
                println!("stage 2: restored {} utterances", stats.converted);
            }
        }
        Command::Synthesize(phase) => {
            let n = phase.runner()?.run_synthesize()?;
            println!("synthesized {n} waveforms");
        }
        Command::Evaluate(phase) => {
            let runner = phase.runner()?;
            let table = runner.run_evaluate()?;
            println!("speaker\tgender\tstage\tmcd_db\tser_pct");
            for row in table.rows() {
                println!(
                    "{}\t{}\t{}\t{:.4}\t{:.4}",
                    row.speaker, row.gender, row.stage, row.mcd_db, row.ser_pct
                );
            }
            println!("written: {}", runner.scores_path().display());
        }
        Command::RankSpeakers { scores, criterion, stage } => {
            let criterion: Criterion = criterion.parse()?;
            let stage: Stage = stage.parse()?;
            let table = load_scores_csv(&scores)?;
            let mut single = dysvc::eval::SpeakerScoreTable::new();
            for row in table.rows() {
                if row.stage == stage {
                    single.push(row.clone())?;
                }
            }
            let ranked = rank_reference_speakers(&single, criterion)?;
            for (i, spk) in ranked.iter().enumerate() {
                let row = single.get(spk, stage).expect("ranked speaker");
                println!("{}. {spk}\t{:.4}", i + 1, row.value(criterion));
            }
        }
        Command::Report { config, out } => {
            let config = PipelineConfig::load(&config)?;
            let report = emit_report(&config, &out)?;
            println!("report: {}", report.report_dir.display());
            println!("best reference by SER: {}", report.ranked_by_ser[0]);
            println!("best reference by MCD: {}", report.ranked_by_mcd[0]);
        }
        Command::Run { phase, force } => {
            let runner = phase.runner()?;
            let n = runner.extract_features()?;
            println!("features: {n} newly extracted");
            describe(runner.run_pretrain_decoder(force)?, "pretrain-decoder");
            describe(runner.run_pretrain_encoder(force)?, "pretrain-encoder");
            describe(runner.run_train_vc(force)?, "train-vc");
            let s1 = runner.run_convert_stage1()?;
            println!(
                "stage 1: converted {} utterances ({} truncated)",
                s1.converted, s1.truncated
            );
            describe(runner.run_train_vae(force)?, "train-vae");
            let s2 = runner.run_convert_stage2()?;
            println!("stage 2: restored {} utterances", s2.converted);
            let n = runner.run_synthesize()?;
            println!("synthesized {n} waveforms");
            runner.run_evaluate()?;
            let report = emit_report(runner.config(), runner.out_dir())?;
            println!("report: {}", report.report_dir.display());
            println!("best reference by SER: {}", report.ranked_by_ser[0]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    /// Clap validates argument definitions lazily; this catches conflicting
    /// flags or malformed defaults at test time instead of at first use.
    #[test]
    fn cli_definition_is_consistent() {
        super::Cli::command().debug_assert();
    }
}
