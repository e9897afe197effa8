//! Symbol vocabulary for the text encoder and the shared speaker index.
//! Both are derived deterministically (sorted order) so that a config plus
//! manifest always reproduces the same id assignment.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// End-of-sequence marker appended to every token sequence.
pub const EOS: &str = "<eos>";

/// Token-to-id map over a sorted symbol set, with a trailing end marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
}

impl Vocabulary {
    /// Build from every token in the corpus; ids follow sorted order, and
    /// the end marker gets the last id.
    pub fn from_tokens<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Self {
        let set: BTreeSet<&str> = tokens.into_iter().collect();
        let mut symbols: Vec<String> = set.into_iter().map(|s| s.to_string()).collect();
        symbols.push(EOS.to_string());
        Vocabulary { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn eos_id(&self) -> usize {
        self.symbols.len() - 1
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    /// Encode a transcript, appending the end marker. Unknown symbols are an
    /// error naming both the symbol and the utterance.
    pub fn encode<T: AsRef<str>>(&self, tokens: &[T], utterance: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(tokens.len() + 1);
        for t in tokens {
            let sym = t.as_ref();
            ids.push(self.id(sym).ok_or_else(|| Error::UnknownSymbol {
                symbol: sym.to_string(),
                utterance: utterance.to_string(),
            })?);
        }
        ids.push(self.eos_id());
        Ok(ids)
    }
}

/// Sorted speaker-id table shared by both stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerTable {
    names: Vec<String>,
}

impl SpeakerTable {
    pub fn from_names<'a, I: IntoIterator<Item = &'a str>>(names: I) -> Self {
        let set: BTreeSet<&str> = names.into_iter().collect();
        SpeakerTable {
            names: set.into_iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .map_err(|_| Error::UnknownSpeaker(name.to_string()))
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_sorted_and_ends_with_eos() {
        let v = Vocabulary::from_tokens(["ma1", "ni3", "hao3", "ni3"]);
        assert_eq!(v.len(), 4); // 3 unique + eos
        assert_eq!(v.id("hao3"), Some(0));
        assert_eq!(v.id("ma1"), Some(1));
        assert_eq!(v.id("ni3"), Some(2));
        assert_eq!(v.eos_id(), 3);
    }

    #[test]
    fn encode_appends_eos_and_rejects_unknowns() {
        let v = Vocabulary::from_tokens(["a", "b"]);
        assert_eq!(v.encode(&["b", "a"], "u1").unwrap(), vec![1, 0, 2]);
        let err = v.encode(&["a", "zzz"], "u7").unwrap_err();
        match err {
            Error::UnknownSymbol { symbol, utterance } => {
                assert_eq!(symbol, "zzz");
                assert_eq!(utterance, "u7");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn speaker_table_sorted_lookup() {
        let t = SpeakerTable::from_names(["SP09", "SP01", "patient", "SP01"]);
        assert_eq!(t.names(), &["SP01", "SP09", "patient"]);
        assert_eq!(t.index("SP09").unwrap(), 1);
        assert!(matches!(t.index("ghost"), Err(Error::UnknownSpeaker(_))));
    }
}
