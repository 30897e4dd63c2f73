//! Simulator rule set: service-level pre-filter terms plus leveled,
//! categorized channel-filter terms.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::normalize::normalize;
use super::MockError;
use crate::model::{FilterLevel, ModerationCategory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    /// Lowercase token or space-joined n-gram.
    pub term: String,
    pub category: ModerationCategory,
    /// Lowest channel level at which this term is caught.
    pub min_level: FilterLevel,
    #[serde(default)]
    pub prefilter: bool,
}

impl LexiconEntry {
    pub fn channel(term: &str, category: ModerationCategory, min_level: u8) -> Self {
        LexiconEntry {
            term: term.to_string(),
            category,
            min_level: FilterLevel::new(min_level as i64).expect("level in 0..=4"),
            prefilter: false,
        }
    }

    pub fn prefilter(term: &str, category: ModerationCategory) -> Self {
        LexiconEntry {
            term: term.to_string(),
            category,
            min_level: FilterLevel::OFF,
            prefilter: true,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledEntry {
    pub entry: LexiconEntry,
    pub tokens: Vec<String>,
}

/// A validated lexicon indexed by first token. Load order is preserved and
/// used as the final tie-breaker.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    pub(crate) entries: Vec<CompiledEntry>,
    pub(crate) by_first_token: HashMap<String, Vec<usize>>,
}

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = LexiconEntry>) -> Result<Self, MockError> {
        let mut lexicon = Lexicon::default();
        for (line, entry) in entries.into_iter().enumerate() {
            lexicon.push(entry, line + 1)?;
        }
        Ok(lexicon)
    }

    fn push(&mut self, entry: LexiconEntry, line: usize) -> Result<(), MockError> {
        let tokens = normalize(&entry.term);
        if tokens.is_empty() {
            return Err(MockError::Lexicon {
                line,
                reason: format!("term {:?} has no alphanumeric tokens", entry.term),
            });
        }
        if !entry.prefilter && entry.min_level == FilterLevel::OFF {
            return Err(MockError::Lexicon {
                line,
                reason: format!("channel term {:?} needs min_level in 1..=4", entry.term),
            });
        }
        let idx = self.entries.len();
        self.by_first_token
            .entry(tokens[0].clone())
            .or_default()
            .push(idx);
        self.entries.push(CompiledEntry { entry, tokens });
        Ok(())
    }

    /// Parse JSON lines; blank lines and `#` comments are skipped.
    pub fn from_reader(reader: impl BufRead) -> Result<Self, MockError> {
        let mut lexicon = Lexicon::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| MockError::Io(e.to_string()))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let entry: LexiconEntry = serde_json::from_str(trimmed).map_err(|e| MockError::Lexicon {
                line: i + 1,
                reason: e.to_string(),
            })?;
            lexicon.push(entry, i + 1)?;
        }
        Ok(lexicon)
    }

    pub fn load(path: &Path) -> Result<Self, MockError> {
        let file = std::fs::File::open(path)
            .map_err(|e| MockError::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.iter().map(|c| &c.entry)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose token sequence starts at `tokens[pos]`, in load order.
    pub(crate) fn matches_at<'a>(
        &'a self,
        tokens: &'a [String],
        pos: usize,
    ) -> impl Iterator<Item = (usize, &'a CompiledEntry)> + 'a {
        self.by_first_token
            .get(&tokens[pos])
            .into_iter()
            .flatten()
            .map(move |&idx| (idx, &self.entries[idx]))
            .filter(move |(_, c)| {
                let end = pos + c.tokens.len();
                end <= tokens.len() && tokens[pos..end] == c.tokens[..]
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_jsonl_with_comments() {
        let src = r#"
# demo
{"term":"slura","category":"misogyny","min_level":2}
{"term":"blocked phrase","category":"racism","min_level":0,"prefilter":true}
"#;
        let lex = Lexicon::from_reader(src.as_bytes()).unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.entries[1].tokens, vec!["blocked", "phrase"]);
    }

    #[test]
    fn rejects_bad_entries() {
        let err = Lexicon::from_reader(r#"{"term":"...","category":"racism","min_level":1}"#.as_bytes())
            .unwrap_err();
        assert!(matches!(err, MockError::Lexicon { line: 1, .. }));
        let err = Lexicon::from_reader(r#"{"term":"x","category":"racism","min_level":0}"#.as_bytes())
            .unwrap_err();
        assert!(matches!(err, MockError::Lexicon { .. }));
        let err = Lexicon::from_reader(r#"{"term":"x","category":"racism","min_level":9}"#.as_bytes())
            .unwrap_err();
        assert!(matches!(err, MockError::Lexicon { .. }));
    }

    #[test]
    fn ngram_lookup_respects_token_boundaries() {
        let lex = Lexicon::new([LexiconEntry::channel("foo bar", ModerationCategory::Racism, 1)]).unwrap();
        let toks: Vec<String> = ["x", "foo", "bar"].iter().map(|s| s.to_string()).collect();
        assert_eq!(lex.matches_at(&toks, 1).count(), 1);
        let toks: Vec<String> = ["foo"].iter().map(|s| s.to_string()).collect();
        assert_eq!(lex.matches_at(&toks, 0).count(), 0);
    }
}
