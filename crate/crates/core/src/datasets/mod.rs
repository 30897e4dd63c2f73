//! Corpus ingestion, labeling, target standardization and subset extraction.

mod load;
mod mapping;

use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Label, Message};

pub use load::{load, sbic_label, TOXIGEN_BENIGN_BAND, TOXIGEN_HATE_BAND};
pub use mapping::{GroupSet, MappingTable, Standardization, Subset, Target};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("{path}: missing column {column:?} for {kind}")]
    MissingColumn { path: PathBuf, kind: DatasetKind, column: String },
    #[error("{path} row {row}: bad {column} value {value:?}")]
    BadValue { path: PathBuf, row: usize, column: String, value: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Validation(String),
    #[error("mapping table: {0}")]
    Mapping(String),
    #[error("unknown subset {0:?}")]
    UnknownSubset(String),
    #[error("corpus line {line}: {reason}")]
    Corpus { line: usize, reason: String },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        DatasetError::Io { path: path.to_path_buf(), reason: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Sbic,
    DynaHate,
    ToxiGen,
    Ihc,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [DatasetKind::Sbic, DatasetKind::DynaHate, DatasetKind::ToxiGen, DatasetKind::Ihc];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Sbic => "sbic",
            DatasetKind::DynaHate => "dynahate",
            DatasetKind::ToxiGen => "toxigen",
            DatasetKind::Ihc => "ihc",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DatasetError::Validation(format!("unknown dataset kind {s:?}")))
    }
}

/// Column name overrides; unset fields fall back to the kind's defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnBindings {
    pub text: Option<String>,
    /// Label column, or the score column for SBIC and ToxiGen.
    pub label: Option<String>,
    /// ToxiGen only: the prompt label column.
    pub prompt_label: Option<String>,
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub path: PathBuf,
    #[serde(default)]
    pub columns: ColumnBindings,
    /// SBIC offensiveness threshold.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    1.0
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, path: impl Into<PathBuf>) -> Self {
        DatasetSpec { kind, path: path.into(), columns: ColumnBindings::default(), threshold: 1.0 }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }
}

pub fn write_corpus<W: Write>(mut out: W, messages: &[Message]) -> std::io::Result<()> {
    for m in messages {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Read a JSONL corpus, one [`Message`] per non-blank line.
pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<Message>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| DatasetError::Corpus { line: i + 1, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let m = serde_json::from_str(&line).map_err(|e| DatasetError::Corpus { line: i + 1, reason: e.to_string() })?;
        out.push(m);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Message>, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    read_corpus(std::io::BufReader::new(file))
}

/// Share of messages labeled hateful; `None` when nothing is labeled.
pub fn hate_share(messages: &[Message]) -> Option<f64> {
    let labeled = messages.iter().filter(|m| m.label.is_some()).count();
    let hate = messages.iter().filter(|m| m.label == Some(Label::Hate)).count();
    (labeled > 0).then(|| hate as f64 / labeled as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_round_trip() {
        let msgs = vec![
            Message::new("a", "hello").with_label(Label::Hate).with_targets(["bla"]),
            Message::new("b", "bye \"there\"").with_source("toy"),
        ];
        let mut buf = Vec::new();
        write_corpus(&mut buf, &msgs).unwrap();
        assert_eq!(read_corpus(&buf[..]).unwrap(), msgs);
    }

    #[test]
    fn corpus_errors_carry_line() {
        let err = read_corpus(&b"\n{not json}\n"[..]).unwrap_err();
        assert!(matches!(err, DatasetError::Corpus { line: 2, .. }));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("DynaHate".parse::<DatasetKind>().unwrap(), DatasetKind::DynaHate);
        assert!("reddit".parse::<DatasetKind>().is_err());
    }
}
