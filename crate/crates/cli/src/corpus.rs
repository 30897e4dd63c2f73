//! Loading the configured corpora and their mapping tables.

use std::collections::HashSet;

use modaudit_core::datasets::{self, write_corpus, DatasetSpec, MappingTable};
use modaudit_core::Message;
use sha2::{Digest, Sha256};

use crate::config::{CorpusSource, MappingRef, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub name: String,
    pub messages: Vec<Message>,
    /// Pool subsets are carved from. Same as `messages` unless a separate
    /// subset threshold is configured, in which case ids carry a `@subset` suffix.
    pub subset_pool: Vec<Message>,
    pub mapping: Option<MappingTable>,
}

fn read(src: &CorpusSource, threshold: Option<f64>, limit: Option<usize>) -> Result<Vec<Message>> {
    let cfg_err = |e: datasets::DatasetError| CliError::Config(format!("corpus {}: {e}", src.name));
    let mut messages = match src.kind {
        Some(kind) => {
            let mut spec = DatasetSpec::new(kind, &src.path);
            spec.columns = src.columns.clone();
            if let Some(t) = threshold {
                spec = spec.with_threshold(t);
            }
            datasets::load(&spec).map_err(cfg_err)?
        }
        None => datasets::load_corpus(&src.path).map_err(cfg_err)?,
    };
    if let Some(n) = limit {
        messages.truncate(n);
    }
    for m in &mut messages {
        if m.source.is_empty() {
            m.source = src.name.clone();
        }
    }
    Ok(messages)
}

pub fn load_mapping(src: &CorpusSource) -> Result<Option<MappingTable>> {
    match src.mapping_ref()? {
        None => Ok(None),
        Some(MappingRef::Builtin(kind)) => MappingTable::builtin(kind)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("corpus {}: no shipped mapping for {kind}", src.name))),
        Some(MappingRef::File(p)) => MappingTable::load(&p)
            .map(Some)
            .map_err(|e| CliError::Config(format!("corpus {}: {e}", src.name))),
    }
}

pub fn load_corpora(cfg: &RunConfig) -> Result<Vec<LoadedCorpus>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for src in &cfg.corpora {
        let messages = read(src, src.threshold, cfg.limit)?;
        let subset_pool = match (src.subset_threshold, src.kind) {
            (Some(t), Some(_)) if Some(t) != src.threshold => {
                let mut pool = read(src, Some(t), cfg.limit)?;
                for m in &mut pool {
                    m.id.0.push_str("@subset");
                }
                pool
            }
            _ => messages.clone(),
        };
        for m in messages.iter().chain(&subset_pool) {
            if m.text.is_empty() {
                return Err(CliError::Config(format!("corpus {}: message {} has empty text", src.name, m.id)));
            }
        }
        let mut ids: HashSet<&str> = HashSet::new();
        for m in messages.iter().chain(subset_pool.iter().filter(|m| m.id.0.ends_with("@subset"))) {
            if !ids.insert(m.id.as_str()) || seen.contains(m.id.as_str()) {
                return Err(CliError::Config(format!("corpus {}: duplicate message id {}", src.name, m.id)));
            }
        }
        seen.extend(ids.into_iter().map(String::from));
        out.push(LoadedCorpus { name: src.name.clone(), mapping: load_mapping(src)?, messages, subset_pool });
    }
    Ok(out)
}

/// Hex SHA-256 over the JSONL form of every loaded message, in config order.
pub fn corpus_hash(corpora: &[LoadedCorpus]) -> String {
    let mut h = Sha256::new();
    for c in corpora {
        let mut buf = Vec::new();
        write_corpus(&mut buf, &c.messages).expect("in-memory write");
        if c.subset_pool != c.messages {
            write_corpus(&mut buf, &c.subset_pool).expect("in-memory write");
        }
        h.update(c.name.as_bytes());
        h.update([0]);
        h.update(&buf);
    }
    hex::encode(h.finalize())
}

pub fn file_hash(path: &std::path::Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
