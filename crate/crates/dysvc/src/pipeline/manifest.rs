//! Corpus manifests: JSON-lines files with one utterance record per line.
//!
//! Record fields: `utt_id`, `speaker_id`, `audio_path` (relative paths are
//! resolved against the manifest's directory), `transcript` (token array),
//! and `split` (`train` / `validation` / `test`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "validation", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split {other:?}; allowed values: {}",
                SPLITS.join(", ")
            ))),
        }
    }
}

/// Raw on-disk shape of one line. Unknown fields are rejected so typos fail
/// loudly.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    utt_id: String,
    speaker_id: String,
    audio_path: String,
    transcript: Vec<String>,
    split: String,
}

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    pub utt_id: String,
    pub speaker_id: String,
    /// As written in the file; see [`CorpusManifest::audio_path`] for the
    /// resolved location.
    pub audio_path: PathBuf,
    pub transcript: Vec<String>,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct CorpusManifest {
    records: Vec<ManifestRecord>,
    base_dir: PathBuf,
    path: PathBuf,
}

fn valid_id(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl CorpusManifest {
    /// Load and validate a JSON-lines manifest. Rejects malformed lines
    /// (with their line number), duplicate `(utt_id, speaker_id)` keys
    /// (naming both lines), bad splits, unsafe ids, and dangling audio
    /// paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let mut records = Vec::new();
        let mut seen: HashMap<(String, String), usize> = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let manifest_err = |msg: String| Error::Manifest {
                path: path.clone(),
                line: line_no,
                msg,
            };
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord =
                serde_json::from_str(line).map_err(|e| manifest_err(e.to_string()))?;
            if !valid_id(&raw.utt_id) {
                return Err(manifest_err(format!(
                    "utt_id {:?} must be nonempty [A-Za-z0-9_-]",
                    raw.utt_id
                )));
            }
            if !valid_id(&raw.speaker_id) {
                return Err(manifest_err(format!(
                    "speaker_id {:?} must be nonempty [A-Za-z0-9_-]",
                    raw.speaker_id
                )));
            }
            let split = Split::from_str(&raw.split).map_err(|e| manifest_err(e.to_string()))?;
            if raw.transcript.is_empty() || raw.transcript.iter().any(|t| t.trim().is_empty()) {
                return Err(manifest_err("transcript tokens must be nonempty".into()));
            }
            if let Some(&first) = seen.get(&(raw.utt_id.clone(), raw.speaker_id.clone())) {
                return Err(manifest_err(format!(
                    "duplicate (utt_id, speaker_id) ({:?}, {:?}); first defined at line {first}",
                    raw.utt_id, raw.speaker_id
                )));
            }
            seen.insert((raw.utt_id.clone(), raw.speaker_id.clone()), line_no);
            let audio_path = PathBuf::from(&raw.audio_path);
            let resolved = if audio_path.is_absolute() {
                audio_path.clone()
            } else {
                base_dir.join(&audio_path)
            };
            if !resolved.is_file() {
                return Err(manifest_err(format!(
                    "audio file not found: {}",
                    resolved.display()
                )));
            }
            records.push(ManifestRecord {
                utt_id: raw.utt_id,
                speaker_id: raw.speaker_id,
                audio_path,
                transcript: raw.transcript,
                split,
            });
        }
        if records.is_empty() {
            return Err(Error::EmptyInput(format!("manifest {}", path.display())));
        }
        Ok(CorpusManifest {
            records,
            base_dir,
            path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    /// Absolute (resolved) audio location of a record.
    pub fn audio_path(&self, record: &ManifestRecord) -> PathBuf {
        if record.audio_path.is_absolute() {
            record.audio_path.clone()
        } else {
            self.base_dir.join(&record.audio_path)
        }
    }

    /// All speaker ids, sorted.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.speaker_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn get(&self, utt_id: &str, speaker_id: &str) -> Option<&ManifestRecord> {
        self.records
            .iter()
            .find(|r| r.utt_id == utt_id && r.speaker_id == speaker_id)
    }

    /// Records of one speaker and split, sorted by utterance id.
    pub fn select(&self, speaker_id: &str, split: Split) -> Vec<&ManifestRecord> {
        let mut out: Vec<&ManifestRecord> = self
            .records
            .iter()
            .filter(|r| r.speaker_id == speaker_id && r.split == split)
            .collect();
        out.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        out
    }

    /// All distinct tokens across every transcript, sorted.
    pub fn token_inventory(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .records
            .iter()
            .flat_map(|r| r.transcript.iter().map(String::as_str))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// `(train, validation, test)` record counts for one speaker.
    pub fn split_counts(&self, speaker_id: &str) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for r in self.records.iter().filter(|r| r.speaker_id == speaker_id) {
            match r.split {
                Split::Train => counts.0 += 1,
                Split::Validation => counts.1 += 1,
                Split::Test => counts.2 += 1,
            }
        }
        counts
    }

    /// Shared utterance ids of a parallel corpus: every returned id has
    /// exactly one record per given speaker in the given split. Errors on
    /// the first id covered by some but not all speakers.
    pub fn parallel_utterances(&self, speakers: &[&str], split: Split) -> Result<Vec<String>> {
        if speakers.is_empty() {
            return Err(Error::EmptyInput("parallel speaker list".into()));
        }
        let mut coverage: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for r in &self.records {
            if r.split == split && speakers.contains(&r.speaker_id.as_str()) {
                coverage
                    .entry(r.utt_id.as_str())
                    .or_default()
                    .insert(r.speaker_id.as_str());
            }
        }
        let mut out = Vec::new();
        for (utt, covered) in &coverage {
            if covered.len() != speakers.len() {
                let missing = speakers
                    .iter()
                    .find(|s| !covered.contains(**s))
                    .expect("some speaker must be missing");
                let present = covered.iter().next().expect("nonempty");
                return Err(Error::UnpairedUtterance {
                    utterance: utt.to_string(),
                    speaker: present.to_string(),
                    missing: missing.to_string(),
                });
            }
            out.push(utt.to_string());
        }
        if out.is_empty() {
            return Err(Error::EmptyInput(format!(
                "no parallel {split} utterances for speakers {speakers:?}"
            )));
        }
        Ok(out)
    }
}

/// Write records as JSON lines (the inverse of [`CorpusManifest::load`]).
pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let raw = RawRecord {
            utt_id: r.utt_id.clone(),
            speaker_id: r.speaker_id.clone(),
            audio_path: r.audio_path.to_string_lossy().into_owned(),
            transcript: r.transcript.clone(),
            split: r.split.as_str().to_string(),
        };
        let line = serde_json::to_string(&raw).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, rel: &str) {
        let p = dir.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, b"x").unwrap();
    }

    fn line(utt: &str, spk: &str, split: &str) -> String {
        format!(
            r#"{{"utt_id":"{utt}","speaker_id":"{spk}","audio_path":"wav/{spk}/{utt}.wav","transcript":["ni3","hao3"],"split":"{split}"}}"#
        )
    }

    fn write_corpus(dir: &Path, lines: &[String]) -> PathBuf {
        let p = dir.join("manifest.jsonl");
        std::fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    #[test]
    fn well_formed_three_line_file_loads() {
        let tmp = tempfile::tempdir().unwrap();
        for (u, s) in [("u1", "p"), ("u2", "p"), ("u1", "r1")] {
            touch(tmp.path(), &format!("wav/{s}/{u}.wav"));
        }
        let p = write_corpus(
            tmp.path(),
            &[
                line("u1", "p", "train"),
                line("u2", "p", "test"),
                line("u1", "r1", "train"),
            ],
        );
        let m = CorpusManifest::load(&p).unwrap();
        assert_eq!(m.records().len(), 3);
        assert_eq!(m.speakers(), vec!["p".to_string(), "r1".to_string()]);
        assert_eq!(m.split_counts("p"), (1, 0, 1));
        assert_eq!(m.token_inventory(), vec!["hao3".to_string(), "ni3".to_string()]);
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let tmp = tempfile::tempdir().unwrap();
        touch(tmp.path(), "wav/p/u1.wav");
        let p = write_corpus(tmp.path(), &[line("u1", "p", "train"), line("u1", "p", "test")]);
        let err = CorpusManifest::load(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("duplicate"), "{msg}");
    }

    #[test]
    fn unknown_split_lists_allowed_values() {
        let tmp = tempfile::tempdir().unwrap();
        touch(tmp.path(), "wav/p/u1.wav");
        let p = write_corpus(tmp.path(), &[line("u1", "p", "dev")]);
        let err = CorpusManifest::load(&p).unwrap_err().to_string();
        assert!(err.contains("dev"), "{err}");
        assert!(err.contains("train, validation, test"), "{err}");
    }

    #[test]
    fn dangling_audio_path_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write_corpus(tmp.path(), &[line("u1", "p", "train")]);
        let err = CorpusManifest::load(&p).unwrap_err().to_string();
        assert!(err.contains("not found"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected_with_line_number() {
        let tmp = tempfile::tempdir().unwrap();
        touch(tmp.path(), "wav/p/u1.wav");
        let bad = r#"{"utt_id":"u1","speaker_id":"p","audio_path":"wav/p/u1.wav","transcript":["a"],"split":"train","mood":"great"}"#;
        let p = write_corpus(tmp.path(), &[bad.to_string()]);
        let err = CorpusManifest::load(&p).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        assert!(err.contains("mood"), "{err}");
    }

    #[test]
    fn parallel_utterances_detects_missing_counterpart() {
        let tmp = tempfile::tempdir().unwrap();
        for (u, s) in [("u1", "p"), ("u2", "p"), ("u1", "r1")] {
            touch(tmp.path(), &format!("wav/{s}/{u}.wav"));
        }
        let p = write_corpus(
            tmp.path(),
            &[
                line("u1", "p", "train"),
                line("u2", "p", "train"),
                line("u1", "r1", "train"),
            ],
        );
        let m = CorpusManifest::load(&p).unwrap();
        let shared = m.parallel_utterances(&["p"], Split::Train).unwrap();
        assert_eq!(shared, vec!["u1".to_string(), "u2".to_string()]);
        let err = m.parallel_utterances(&["p", "r1"], Split::Train).unwrap_err();
        match err {
            Error::UnpairedUtterance {
                utterance, missing, ..
            } => {
                assert_eq!(utterance, "u2");
                assert_eq!(missing, "r1");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn round_trip_write_then_load() {
        let tmp = tempfile::tempdir().unwrap();
        touch(tmp.path(), "wav/p/u1.wav");
        let records = vec![ManifestRecord {
            utt_id: "u1".into(),
            speaker_id: "p".into(),
            audio_path: PathBuf::from("wav/p/u1.wav"),
            transcript: vec!["ni3".into()],
            split: Split::Train,
        }];
        let p = tmp.path().join("manifest.jsonl");
        write_manifest(&p, &records).unwrap();
        let m = CorpusManifest::load(&p).unwrap();
        assert_eq!(m.records().len(), 1);
        assert_eq!(m.records()[0].utt_id, "u1");
        assert_eq!(m.records()[0].split, Split::Train);
    }
}
