//! Per-speaker score tables, reference-speaker ranking, and stage deltas.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which signal a score row was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    /// The patient's original dysarthric recording.
    Dysarthric,
    /// After the stage-1 sequence-to-sequence conversion.
    Vtn,
    /// After both stages (sequence conversion + speaker restoration).
    VtnVae,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Dysarthric, Stage::Vtn, Stage::VtnVae];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Dysarthric => "dysarthric",
            Stage::Vtn => "vtn",
            Stage::VtnVae => "vtn+vae",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dysarthric" => Ok(Stage::Dysarthric),
            "vtn" => Ok(Stage::Vtn),
            "vtn+vae" => Ok(Stage::VtnVae),
            other => Err(Error::InvalidArgument(format!(
                "unknown stage {other:?}; expected one of dysarthric, vtn, vtn+vae"
            ))),
        }
    }
}

/// Ranking criterion; both are lower-is-better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Mcd,
    Ser,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcd" => Ok(Criterion::Mcd),
            "ser" => Ok(Criterion::Ser),
            other => Err(Error::InvalidArgument(format!(
                "unknown criterion {other:?}; expected mcd or ser"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerScore {
    pub speaker: String,
    pub gender: String,
    pub stage: Stage,
    pub mcd_db: f64,
    pub ser_pct: f64,
}

impl SpeakerScore {
    pub fn value(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Mcd => self.mcd_db,
            Criterion::Ser => self.ser_pct,
        }
    }
}

/// One row per (speaker, stage); all metrics finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeakerScoreTable {
    rows: Vec<SpeakerScore>,
}

impl SpeakerScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: SpeakerScore) -> Result<()> {
        if !row.mcd_db.is_finite() || !row.ser_pct.is_finite() {
            return Err(Error::ScoreTable(format!(
                "non-finite metric for {} at stage {}",
                row.speaker, row.stage
            )));
        }
        if row.speaker.contains(',') || row.gender.contains(',') {
            return Err(Error::ScoreTable("comma in speaker or gender tag".into()));
        }
        if self
            .rows
            .iter()
            .any(|r| r.speaker == row.speaker && r.stage == row.stage)
        {
            return Err(Error::ScoreTable(format!(
                "duplicate row for {} at stage {}",
                row.speaker, row.stage
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[SpeakerScore] {
        &self.rows
    }

    pub fn get(&self, speaker: &str, stage: Stage) -> Option<&SpeakerScore> {
        self.rows
            .iter()
            .find(|r| r.speaker == speaker && r.stage == stage)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Rank speakers by a lower-is-better criterion, ascending, ties broken by
/// speaker id. The table must be single-stage: rows from different stages
/// measure different signals and must not be mixed in one ranking.
pub fn rank_reference_speakers(
    table: &SpeakerScoreTable,
    criterion: Criterion,
) -> Result<Vec<String>> {
    if table.is_empty() {
        return Err(Error::EmptyInput("ranking an empty score table".into()));
    }
    let stage = table.rows()[0].stage;
    if table.rows().iter().any(|r| r.stage != stage) {
        return Err(Error::ScoreTable(
            "ranking requires all rows to share one stage".into(),
        ));
    }
    let mut order: Vec<&SpeakerScore> = table.rows().iter().collect();
    order.sort_by(|a, b| {
        a.value(criterion)
            .partial_cmp(&b.value(criterion))
            .expect("metrics finite by table invariant")
            .then_with(|| a.speaker.cmp(&b.speaker))
    });
    Ok(order.into_iter().map(|r| r.speaker.clone()).collect())
}

/// `value(stage_a) - value(stage_b)` for one speaker and metric.
pub fn stage_delta(
    table: &SpeakerScoreTable,
    speaker: &str,
    criterion: Criterion,
    stage_a: Stage,
    stage_b: Stage,
) -> Result<f64> {
    let row = |stage: Stage| {
        table.get(speaker, stage).ok_or_else(|| {
            Error::ScoreTable(format!("no row for speaker {speaker} at stage {stage}"))
        })
    };
    Ok(row(stage_a)?.value(criterion) - row(stage_b)?.value(criterion))
}

/// CSV header for score tables.
pub const SCORES_CSV_HEADER: &str = "speaker,gender,stage,mcd_db,ser_pct";

pub fn scores_to_csv(table: &SpeakerScoreTable) -> String {
    let mut out = String::from(SCORES_CSV_HEADER);
    out.push('\n');
    for r in table.rows() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.speaker, r.gender, r.stage, r.mcd_db, r.ser_pct
        ));
    }
    out
}

pub fn save_scores_csv(table: &SpeakerScoreTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scores_to_csv(table)).map_err(|e| Error::io(path, e))
}

pub fn load_scores_csv(path: impl AsRef<Path>) -> Result<SpeakerScoreTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SCORES_CSV_HEADER => {}
        other => {
            return Err(Error::ScoreTable(format!(
                "bad header {other:?}; expected {SCORES_CSV_HEADER:?}"
            )))
        }
    }
    let mut table = SpeakerScoreTable::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::ScoreTable(format!(
                "line {}: expected 5 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_num = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| {
                Error::ScoreTable(format!("line {}: bad {what} value {s:?}", i + 2))
            })
        };
        table.push(SpeakerScore {
            speaker: fields[0].to_string(),
            gender: fields[1].to_string(),
            stage: fields[2].parse()?,
            mcd_db: parse_num(fields[3], "mcd_db")?,
            ser_pct: parse_num(fields[4], "ser_pct")?,
        })?;
    }
    Ok(table)
}
