//! On-disk layout of one run: append-only JSONL logs plus a manifest.
//!
//! ```text
//! <out>/<run_id>/
//!   manifest.json
//!   messages.jsonl       every message handed to a stage, with its label
//!   sent.jsonl echoes.jsonl events.jsonl sessions.jsonl
//!   records.jsonl conflicts.jsonl
//!   reports/
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use log::warn;
use modaudit_core::transport::RawLogs;
use modaudit_core::{Conflict, FilterConfig, Message, MessageId, OutcomeRecord, Reconciliation};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const MESSAGES: &str = "messages.jsonl";
pub const SENT: &str = "sent.jsonl";
pub const ECHOES: &str = "echoes.jsonl";
pub const EVENTS: &str = "events.jsonl";
pub const SESSIONS: &str = "sessions.jsonl";
pub const RECORDS: &str = "records.jsonl";
pub const CONFLICTS: &str = "conflicts.jsonl";
const LOCK: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    pub run_id: String,
    pub filters: FilterConfig,
    pub messages: usize,
    pub records: usize,
    pub conflicts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub tool_version: String,
    pub recipe: String,
    pub config_hash: String,
    pub corpus_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon_hash: Option<String>,
    pub config: RunConfig,
    #[serde(default)]
    pub stages: Vec<StageEntry>,
    #[serde(default)]
    pub complete: bool,
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    run_id: &'a str,
    session: usize,
    #[serde(flatten)]
    entry: &'a T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionEntry {
    pub run_id: String,
    pub session: usize,
    pub sent: usize,
    #[serde(rename = "ended_us")]
    pub ended_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct RunDir {
    root: PathBuf,
    next_session: usize,
    locked: bool,
    known_messages: HashSet<MessageId>,
}

impl RunDir {
    /// Open an existing run directory read-only.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join(MANIFEST).is_file() {
            return Err(CliError::Config(format!("{} is not a run directory (no {MANIFEST})", root.display())));
        }
        Ok(RunDir { root, next_session: 0, locked: false, known_messages: HashSet::new() })
    }

    /// Create or resume the run directory for `manifest`. An existing run
    /// with a different config or corpus is refused.
    pub fn create(root: impl Into<PathBuf>, manifest: &Manifest) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("reports")).map_err(|e| CliError::io(root.display(), e))?;
        match OpenOptions::new().write(true).create_new(true).open(root.join(LOCK)) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Config(format!(
                    "run {} is locked by another process (remove {} if stale)",
                    manifest.run_id,
                    root.join(LOCK).display()
                )));
            }
            Err(e) => return Err(CliError::io(root.display(), e)),
        }
        let mut dir = RunDir { root, next_session: 0, locked: true, known_messages: HashSet::new() };
        if let Some(old) = dir.manifest_opt()? {
            if old.config_hash != manifest.config_hash || old.corpus_hash != manifest.corpus_hash {
                return Err(CliError::Config(format!(
                    "run id {} already exists with a different config or corpus",
                    manifest.run_id
                )));
            }
            if old.recipe != manifest.recipe {
                return Err(CliError::Config(format!(
                    "run id {} was started with recipe {}",
                    manifest.run_id, old.recipe
                )));
            }
        } else {
            dir.write_manifest(manifest)?;
        }
        for name in [MESSAGES, SENT, ECHOES, EVENTS, SESSIONS, RECORDS, CONFLICTS] {
            repair_tail(&dir.root.join(name))?;
        }
        dir.next_session = dir.read_jsonl::<SessionEntry>(SESSIONS)?.len();
        dir.known_messages = dir.read_jsonl::<Message>(MESSAGES)?.into_iter().map(|m| m.id).collect();
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn manifest_opt(&self) -> Result<Option<Manifest>> {
        let p = self.path(MANIFEST);
        if !p.exists() {
            return Ok(None);
        }
        let raw = fs::read_to_string(&p).map_err(|e| CliError::io(p.display(), e))?;
        serde_json::from_str(&raw).map(Some).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
    }

    pub fn manifest(&self) -> Result<Manifest> {
        self.manifest_opt()?.ok_or_else(|| CliError::Config(format!("{}: missing manifest", self.root.display())))
    }

    pub fn write_manifest(&self, m: &Manifest) -> Result<()> {
        let json = serde_json::to_string_pretty(m).expect("manifest serializes");
        self.write_atomic(MANIFEST, json.as_bytes())
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        let tmp = self.path(&format!("{name}.tmp"));
        fs::write(&tmp, bytes).map_err(|e| CliError::io(tmp.display(), e))?;
        fs::rename(&tmp, &p).map_err(|e| CliError::io(p.display(), e))
    }

    /// Write a file under `reports/`.
    pub fn write_report(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let rel = format!("reports/{name}");
        self.write_atomic(&rel, bytes)?;
        Ok(self.path(&rel))
    }

    fn append<T: Serialize>(&self, name: &str, items: impl IntoIterator<Item = T>) -> Result<()> {
        let p = self.path(name);
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, &item).expect("log entry serializes");
            buf.push(b'\n');
        }
        if buf.is_empty() {
            return Ok(());
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&p).map_err(|e| CliError::io(p.display(), e))?;
        f.write_all(&buf).and_then(|_| f.sync_data()).map_err(|e| CliError::io(p.display(), e))
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>> {
        read_jsonl(&self.path(name))
    }

    /// Reserve the next session number.
    pub fn next_session(&mut self) -> usize {
        self.next_session += 1;
        self.next_session - 1
    }

    pub fn append_logs(&self, run_id: &str, session: usize, logs: &RawLogs, error: Option<String>) -> Result<()> {
        let tag = |entry| Tagged { run_id, session, entry };
        self.append(SENT, logs.sent.iter().map(tag))?;
        self.append(ECHOES, logs.echoes.iter().map(|entry| Tagged { run_id, session, entry }))?;
        self.append(EVENTS, logs.events.iter().map(|entry| Tagged { run_id, session, entry }))?;
        let entry = SessionEntry {
            run_id: run_id.to_string(),
            session,
            sent: logs.sent.len(),
            ended_us: logs.ended_at.as_micros() as u64,
            error,
        };
        self.append(SESSIONS, [entry])
    }

    pub fn append_reconciliation(&self, rec: &Reconciliation) -> Result<()> {
        self.append(RECORDS, &rec.records)?;
        self.append(CONFLICTS, &rec.conflicts)
    }

    /// Persist messages not yet recorded, keeping the first copy of each id.
    pub fn register_messages(&mut self, messages: &[Message]) -> Result<()> {
        let fresh: Vec<&Message> = messages.iter().filter(|m| self.known_messages.insert(m.id.clone())).collect();
        self.append(MESSAGES, fresh)
    }

    pub fn messages(&self) -> Result<Vec<Message>> {
        self.read_jsonl(MESSAGES)
    }

    pub fn records(&self) -> Result<Vec<OutcomeRecord>> {
        self.read_jsonl(RECORDS)
    }

    pub fn conflicts(&self) -> Result<Vec<Conflict>> {
        self.read_jsonl(CONFLICTS)
    }

    /// Ids of `run_id` already settled, as a record or a conflict.
    pub fn resolved(&self, run_id: &str) -> Result<HashSet<MessageId>> {
        let mut ids: HashSet<MessageId> =
            self.records()?.into_iter().filter(|r| r.run_id == run_id).map(|r| r.id).collect();
        ids.extend(self.conflicts()?.into_iter().filter(|c| c.run_id == run_id).map(|c| c.id));
        Ok(ids)
    }

    /// Records of `run_id`, first copy per id.
    pub fn records_for(&self, run_id: &str) -> Result<BTreeMap<MessageId, OutcomeRecord>> {
        let mut out = BTreeMap::new();
        for r in self.records()?.into_iter().filter(|r| r.run_id == run_id) {
            out.entry(r.id.clone()).or_insert(r);
        }
        Ok(out)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if self.locked {
            let _ = fs::remove_file(self.root.join(LOCK));
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::io(path.display(), e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path.display(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| CliError::Scoring(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// Drop a torn final line left by an interrupted append.
fn repair_tail(path: &Path) -> Result<()> {
    let mut f = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(CliError::io(path.display(), e)),
    };
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| CliError::io(path.display(), e))?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    warn!("{}: dropping {} bytes of a torn final line", path.display(), bytes.len() - keep);
    f.set_len(keep as u64).map_err(|e| CliError::io(path.display(), e))?;
    f.seek(SeekFrom::End(0)).map_err(|e| CliError::io(path.display(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use modaudit_core::Outcome;

    fn manifest(hash: &str) -> Manifest {
        Manifest {
            run_id: "r".into(),
            tool_version: "0".into(),
            recipe: "table1".into(),
            config_hash: hash.into(),
            corpus_hash: "c".into(),
            lexicon_hash: None,
            config: RunConfig::from_json(r#"{"run_id":"r"}"#).unwrap(),
            stages: vec![],
            complete: false,
        }
    }

    fn record(run: &str, id: &str) -> OutcomeRecord {
        OutcomeRecord { run_id: run.into(), id: id.into(), text: "t".into(), outcome: Outcome::Passed, latency: None }
    }

    #[test]
    fn resume_and_lock() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("r");
        {
            let dir = RunDir::create(&root, &manifest("a")).unwrap();
            assert!(RunDir::create(&root, &manifest("a")).is_err(), "second writer is locked out");
            dir.append_reconciliation(&Reconciliation { records: vec![record("r:s", "1")], conflicts: vec![] }).unwrap();
        }
        let dir = RunDir::create(&root, &manifest("a")).unwrap();
        assert_eq!(dir.resolved("r:s").unwrap().len(), 1);
        assert!(dir.resolved("r:other").unwrap().is_empty());
        drop(dir);
        assert!(matches!(RunDir::create(&root, &manifest("b")), Err(CliError::Config(_))));
    }

    #[test]
    fn torn_line_repaired() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("r");
        drop(RunDir::create(&root, &manifest("a")).unwrap());
        let line = serde_json::to_string(&record("r:s", "1")).unwrap();
        fs::write(root.join(RECORDS), format!("{line}\n{{\"run_id\":\"r:s\",\"id")).unwrap();
        let dir = RunDir::create(&root, &manifest("a")).unwrap();
        assert_eq!(dir.records().unwrap().len(), 1);
        dir.append_reconciliation(&Reconciliation { records: vec![record("r:s", "2")], conflicts: vec![] }).unwrap();
        assert_eq!(dir.records().unwrap().len(), 2);
    }

    #[test]
    fn messages_dedupe() {
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = RunDir::create(tmp.path().join("r"), &manifest("a")).unwrap();
        dir.register_messages(&[Message::new("a", "x"), Message::new("b", "y")]).unwrap();
        dir.register_messages(&[Message::new("a", "x"), Message::new("c", "z")]).unwrap();
        assert_eq!(dir.messages().unwrap().len(), 3);
    }
}
