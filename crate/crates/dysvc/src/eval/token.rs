//! Syllable tokens (pinyin with optional trailing tone digit) and
//! transcript-file I/O.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Drop one trailing tone digit ('1'..'5'); a bare digit stays untouched so
/// the token never becomes empty.
pub fn strip_tone_token(token: &str) -> &str {
    let bytes = token.as_bytes();
    if bytes.len() >= 2 && matches!(bytes[bytes.len() - 1], b'1'..=b'5') {
        &token[..token.len() - 1]
    } else {
        token
    }
}

/// Tone-discard pass over a whole sequence; count is unchanged.
pub fn strip_tone<T: AsRef<str>>(tokens: &[T]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| strip_tone_token(t.as_ref()).to_string())
        .collect()
}

/// Hook for plugging in a real recognizer; evaluation otherwise ingests
/// hypothesis transcripts from files.
pub trait Transcriber {
    fn transcribe(&self, wave: &Waveform) -> Result<Vec<String>>;
}

/// Parse one `utt_id<TAB>token token token` line.
fn parse_line(path: &Path, lineno: usize, line: &str) -> Result<(String, Vec<String>)> {
    let mk = |msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line: lineno,
        msg,
    };
    let (id, rest) = line
        .split_once('\t')
        .ok_or_else(|| mk("expected utt_id<TAB>tokens".to_string()))?;
    if id.is_empty() {
        return Err(mk("empty utterance id".to_string()));
    }
    let tokens: Vec<String> = rest.split_whitespace().map(|t| t.to_string()).collect();
    if tokens.is_empty() {
        return Err(mk(format!("no tokens for utterance {id:?}")));
    }
    Ok((id.to_string(), tokens))
}

/// Load a transcript file into an id -> tokens map. Duplicate ids are an
/// error.
pub fn load_transcripts(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, tokens) = parse_line(path, i + 1, line)?;
        if out.insert(id.clone(), tokens).is_some() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("duplicate utterance id {id:?}"),
            });
        }
    }
    Ok(out)
}

/// Write transcripts sorted by utterance id (deterministic bytes).
pub fn save_transcripts(
    transcripts: &BTreeMap<String, Vec<String>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (id, tokens) in transcripts {
        out.push_str(id);
        out.push('\t');
        out.push_str(&tokens.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_discard_examples() {
        assert_eq!(strip_tone(&["ni3", "hao3"]), vec!["ni", "hao"]);
        assert_eq!(strip_tone::<&str>(&[]), Vec::<String>::new());
        assert_eq!(strip_tone(&["ma"]), vec!["ma"]);
        // neutral tone digit 5 is also discarded
        assert_eq!(strip_tone(&["de5"]), vec!["de"]);
        // a bare digit is left alone rather than emptied
        assert_eq!(strip_tone(&["3"]), vec!["3"]);
        // non-tone trailing characters pass through
        assert_eq!(strip_tone(&["ni6"]), vec!["ni6"]);
    }

    #[test]
    fn strip_tone_is_idempotent_on_valid_tokens() {
        let tokens = vec!["zhong1", "guo2", "hen3", "da4", "de5", "ma"];
        let once = strip_tone(&tokens);
        let twice = strip_tone(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn transcript_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.tsv");
        let mut map = BTreeMap::new();
        map.insert("u001".to_string(), vec!["ni3".to_string(), "hao3".to_string()]);
        map.insert("u002".to_string(), vec!["zai4".to_string(), "jian4".to_string()]);
        save_transcripts(&map, &path).unwrap();
        let back = load_transcripts(&path).unwrap();
        assert_eq!(map, back);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "u001\tni3 hao3\nno-tab-here\n").unwrap();
        let err = load_transcripts(&path).unwrap_err();
        match err {
            Error::Manifest { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.tsv");
        std::fs::write(&path, "u001\ta b\nu001\tc d\n").unwrap();
        assert!(load_transcripts(&path).is_err());
    }
}
