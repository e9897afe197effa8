//! Report emission: merged loss curves, a scatter table for plotting,
//! a human-readable summary, and a provenance record.
//!
//! Everything under `report/` except `provenance.json` is a pure function
//! of the run artifacts, so reruns with identical seeds reproduce those
//! files byte for byte; `provenance.json` carries a wall-clock timestamp
//! and is excluded from any byte-level comparison.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{
    load_scores_csv, rank_reference_speakers, stage_delta, Criterion, SpeakerScoreTable, Stage,
};
use crate::pipeline::config::{file_hash, PipelineConfig};

/// Unified loss-curve header merging the stage-1 and stage-2 column sets;
/// cells a phase does not produce are left blank.
pub const MERGED_LOSS_HEADER: &str =
    "phase\tepoch\ttotal\tl1\tstop\tvalidation\trecon\tkl\tcyc\tadv_enc\tadv_cls";

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub stage1_hash: String,
    pub stage2_hash: String,
    /// SHA-256 of each checkpoint file present in the run directory.
    pub checkpoints: BTreeMap<String, String>,
    pub generated_unix_time: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scores: SpeakerScoreTable,
    pub ranked_by_ser: Vec<String>,
    pub ranked_by_mcd: Vec<String>,
    pub report_dir: PathBuf,
}

/// Rows of the final-stage table only; rankings must not mix stages.
fn final_stage_table(scores: &SpeakerScoreTable) -> Result<SpeakerScoreTable> {
    let mut out = SpeakerScoreTable::new();
    for row in scores.rows() {
        if row.stage == Stage::VtnVae {
            out.push(row.clone())?;
        }
    }
    if out.is_empty() {
        return Err(Error::ScoreTable(
            "score table has no vtn+vae rows to rank".into(),
        ));
    }
    Ok(out)
}

fn merge_loss_files(out: &Path) -> Result<String> {
    let sources = [
        ("decoder-pretrain", out.join("stage1/losses_decoder.tsv"), false),
        ("encoder-pretrain", out.join("stage1/losses_encoder.tsv"), false),
        ("vc-train", out.join("stage1/losses_vc.tsv"), false),
        ("vae-train", out.join("stage2/losses_vae.tsv"), true),
    ];
    let mut merged = String::from(MERGED_LOSS_HEADER);
    merged.push('\n');
    for (phase, path, is_vae) in sources {
        if !path.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let expected = if is_vae {
            super::run::VAE_LOSS_HEADER
        } else {
            super::run::SEQ_LOSS_HEADER
        };
        if header != expected {
            return Err(Error::Integrity {
                path: path.clone(),
                msg: format!("unexpected loss header {header:?}"),
            });
        }
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let row = if is_vae {
                // epoch total recon kl cyc adv_enc adv_cls
                if f.len() != 7 {
                    return Err(Error::Integrity {
                        path: path.clone(),
                        msg: format!("expected 7 fields, got {}: {line:?}", f.len()),
                    });
                }
                format!(
                    "{phase}\t{}\t{}\t\t\t\t{}\t{}\t{}\t{}\t{}\n",
                    f[0], f[1], f[2], f[3], f[4], f[5], f[6]
                )
            } else {
                // epoch total l1 stop validation
                if f.len() < 4 || f.len() > 5 {
                    return Err(Error::Integrity {
                        path: path.clone(),
                        msg: format!("expected 5 fields, got {}: {line:?}", f.len()),
                    });
                }
                let val = f.get(4).copied().unwrap_or_default();
                format!(
                    "{phase}\t{}\t{}\t{}\t{}\t{val}\t\t\t\t\t\n",
                    f[0], f[1], f[2], f[3]
                )
            };
            merged.push_str(&row);
        }
    }
    Ok(merged)
}

fn scatter_csv(final_stage: &SpeakerScoreTable) -> String {
    let mut out = String::from("speaker,gender,mcd_db,ser_pct\n");
    for row in final_stage.rows() {
        out.push_str(&format!(
            "{},{},{:.4},{:.4}\n",
            row.speaker, row.gender, row.mcd_db, row.ser_pct
        ));
    }
    out
}

fn summary_text(
    scores: &SpeakerScoreTable,
    ranked_by_ser: &[String],
    ranked_by_mcd: &[String],
) -> String {
    let mut s = String::new();
    s.push_str("Two-stage conversion report\n");
    s.push_str("===========================\n\n");

    s.push_str("Reference ranking after both stages (lower is better)\n");
    let line = |label: &str, ranked: &[String], crit: Criterion| {
        let cells: Vec<String> = ranked
            .iter()
            .map(|spk| {
                let row = scores.get(spk, Stage::VtnVae).expect("ranked from table");
                format!("{spk} ({:.4})", row.value(crit))
            })
            .collect();
        format!("  by {label}: {}\n", cells.join(", "))
    };
    s.push_str(&line("SER", ranked_by_ser, Criterion::Ser));
    s.push_str(&line("MCD", ranked_by_mcd, Criterion::Mcd));
    s.push_str(&format!("\nBest reference by SER: {}\n", ranked_by_ser[0]));
    s.push_str(&format!("Best reference by MCD: {}\n\n", ranked_by_mcd[0]));

    s.push_str("Per-speaker intelligibility across stages (SER %)\n");
    let mut speakers: Vec<&str> = scores.rows().iter().map(|r| r.speaker.as_str()).collect();
    speakers.dedup();
    for spk in speakers {
        let cell = |stage: Stage| {
            scores
                .get(spk, stage)
                .map(|r| format!("{:.4}", r.ser_pct))
                .unwrap_or_else(|| "-".into())
        };
        let delta = stage_delta(scores, spk, Criterion::Ser, Stage::Dysarthric, Stage::VtnVae)
            .map(|d| format!("{d:.4}"))
            .unwrap_or_else(|_| "-".into());
        s.push_str(&format!(
            "  {spk}: raw {} -> stage1 {} -> stage2 {} (net gain {} points)\n",
            cell(Stage::Dysarthric),
            cell(Stage::Vtn),
            cell(Stage::VtnVae),
            delta
        ));
        let mcd = |stage: Stage| {
            scores
                .get(spk, stage)
                .map(|r| format!("{:.4}", r.mcd_db))
                .unwrap_or_else(|| "-".into())
        };
        s.push_str(&format!(
            "       spectral distortion (dB): vs reference raw {} / stage1 {}; vs patient stage2 {}\n",
            mcd(Stage::Dysarthric),
            mcd(Stage::Vtn),
            mcd(Stage::VtnVae),
        ));
    }
    s
}

fn checkpoint_hashes(out: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for rel in [
        "stage1/decoder.dysvc",
        "stage1/encoder.dysvc",
        "stage1/vc.dysvc",
        "stage2/vae.dysvc",
    ] {
        let path = out.join(rel);
        if path.is_file() {
            map.insert(rel.to_string(), file_hash(&path)?);
        }
    }
    Ok(map)
}

/// Read `report/scores.csv` plus the per-phase loss files and write the
/// derived report artifacts. Fails with a dependency error until the
/// evaluation phase has produced scores.
pub fn emit_report(config: &PipelineConfig, out: &Path) -> Result<RunReport> {
    let report_dir = out.join("report");
    let scores_path = report_dir.join("scores.csv");
    if !scores_path.is_file() {
        return Err(Error::Dependency(format!(
            "{} not found; run `evaluate` first",
            scores_path.display()
        )));
    }
    let scores = load_scores_csv(&scores_path)?;
    let final_stage = final_stage_table(&scores)?;
    let ranked_by_ser = rank_reference_speakers(&final_stage, Criterion::Ser)?;
    let ranked_by_mcd = rank_reference_speakers(&final_stage, Criterion::Mcd)?;

    std::fs::create_dir_all(&report_dir).map_err(|e| Error::io(&report_dir, e))?;
    let write = |name: &str, text: &str| -> Result<()> {
        let path = report_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("losses.tsv", &merge_loss_files(out)?)?;
    write("scatter.csv", &scatter_csv(&final_stage))?;
    write(
        "summary.txt",
        &summary_text(&scores, &ranked_by_ser, &ranked_by_mcd),
    )?;

    let provenance = Provenance {
        config_hash: config.config_hash(),
        stage1_hash: config.stage1_hash(),
        stage2_hash: config.stage2_hash(),
        checkpoints: checkpoint_hashes(out)?,
        generated_unix_time: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let json = serde_json::to_string_pretty(&provenance)
        .map_err(|e| Error::Dependency(format!("provenance serialization: {e}")))?;
    write("provenance.json", &format!("{json}\n"))?;

    Ok(RunReport {
        scores,
        ranked_by_ser,
        ranked_by_mcd,
        report_dir,
    })
}
