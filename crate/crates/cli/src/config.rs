//! Run configuration: one JSON file plus command-line overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use modaudit_core::datasets::{ColumnBindings, DatasetKind};
use modaudit_core::durations::secs;
use modaudit_core::transport::{RateConfig, SessionConfig};
use modaudit_core::{FilterConfig, FilterCriterion, FilterLevel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const LOOPBACK: &str = "loopback";
const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<String>,
    #[serde(default)]
    pub corpora: Vec<CorpusSource>,
    #[serde(default = "default_filters")]
    pub filters: FilterConfig,
    #[serde(default)]
    pub rate: RateConfig,
    #[serde(default)]
    pub endpoint: Endpoint,
    #[serde(default)]
    pub probes: ProbeOptions,
    #[serde(default = "default_timeout", with = "secs")]
    pub timeout: Duration,
    #[serde(default = "default_jitter", with = "secs")]
    pub jitter_bound: Duration,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Cap on messages taken from each corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    /// Messages per session; each session is reconciled and persisted before the next.
    #[serde(default = "default_session_size")]
    pub session_size: usize,
    /// Shuffle seed for `order-invariance`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
}

fn default_filters() -> FilterConfig {
    FilterConfig::all_builtin(FilterLevel::MAX)
}

fn default_timeout() -> Duration {
    SessionConfig::default().timeout
}

fn default_jitter() -> Duration {
    SessionConfig::default().jitter_bound
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_session_size() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub name: String,
    pub path: PathBuf,
    /// Raw dataset format; absent means an already-ingested JSONL corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DatasetKind>,
    #[serde(default)]
    pub columns: ColumnBindings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Threshold used when carving criterion and community subsets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_threshold: Option<f64>,
    /// `builtin:<kind>` or a mapping file path. Defaults to the kind's shipped table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<String>,
}

impl CorpusSource {
    pub fn mapping_ref(&self) -> Result<Option<MappingRef>> {
        match &self.mapping {
            None => Ok(self.kind.map(MappingRef::Builtin)),
            Some(m) => match m.strip_prefix(BUILTIN_PREFIX) {
                Some(kind) => kind
                    .parse()
                    .map(|k| Some(MappingRef::Builtin(k)))
                    .map_err(|e| CliError::Config(format!("corpus {}: {e}", self.name))),
                None => Ok(Some(MappingRef::File(PathBuf::from(m)))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MappingRef {
    Builtin(DatasetKind),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    /// `loopback` or `host:port` of a service speaking the wire protocol.
    #[serde(default = "default_target")]
    pub target: String,
    /// Lexicon for the in-process simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(default = "default_channel")]
    pub channel: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub prefilter_raw: bool,
}

fn default_target() -> String {
    LOOPBACK.into()
}

fn default_channel() -> String {
    "audit".into()
}

impl Default for Endpoint {
    fn default() -> Self {
        Endpoint { target: default_target(), lexicon: None, channel: default_channel(), prefilter_raw: false }
    }
}

impl Endpoint {
    pub fn is_loopback(&self) -> bool {
        self.target == LOOPBACK
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slur_map: Option<PathBuf>,
    /// One fragment per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragments: Option<PathBuf>,
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default = "yes")]
    pub perturbation: bool,
    #[serde(default)]
    pub probe_sets: Vec<PathBuf>,
}

fn default_template() -> String {
    "{fragment}".into()
}

fn yes() -> bool {
    true
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            slur_map: None,
            fragments: None,
            template: default_template(),
            perturbation: true,
            probe_sets: Vec::new(),
        }
    }
}

/// Flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Active filters: comma list, `all` or `none`.
    #[arg(long)]
    pub active: Option<String>,
    /// Level for every active filter (`3`) or per filter (`RER=2,SSG=4`).
    #[arg(long)]
    pub level: Option<String>,
    /// Sliding-window limit as `COUNT/SECONDS`.
    #[arg(long = "rate-limit")]
    pub rate_limit: Option<String>,
    /// `loopback` or `host:port`.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Listen timeout after the last send, in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cap on messages per corpus.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long = "run-id")]
    pub run_id: Option<String>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_level(s: &str) -> Result<FilterLevel> {
    let n: i64 = s.trim().parse().map_err(|_| bad(format!("bad level {s:?}")))?;
    FilterLevel::new(n).map_err(|e| bad(e.to_string()))
}

fn parse_criterion(s: &str) -> Result<FilterCriterion> {
    s.parse().map_err(|e: modaudit_core::ModelError| bad(e.to_string()))
}

/// `all`, `none` or a comma list.
pub fn parse_active(s: &str) -> Result<BTreeSet<FilterCriterion>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "all" => Ok(FilterCriterion::BUILTIN.into_iter().collect()),
        "none" | "" => Ok(BTreeSet::new()),
        _ => s.split(',').map(parse_criterion).collect(),
    }
}

/// Parse `COUNT/SECONDS`.
pub fn parse_rate_limit(s: &str) -> Result<(u32, Duration)> {
    let err = || bad(format!("rate limit {s:?} is not COUNT/SECONDS"));
    let (n, secs) = s.split_once('/').ok_or_else(err)?;
    let n: u32 = n.trim().parse().map_err(|_| err())?;
    let secs: f64 = secs.trim().parse().map_err(|_| err())?;
    let window = Duration::try_from_secs_f64(secs).map_err(|_| err())?;
    Ok((n, window))
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| bad(format!("run config: {e}")))
    }

    /// Read, resolve paths against the file's directory, apply overrides and validate.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&json)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for c in &mut self.corpora {
            fix(&mut c.path);
            if let Some(m) = &c.mapping {
                if !m.starts_with(BUILTIN_PREFIX) && Path::new(m).is_relative() {
                    c.mapping = Some(base.join(m).to_string_lossy().into_owned());
                }
            }
        }
        if let Some(p) = &mut self.endpoint.lexicon {
            fix(p);
        }
        for p in [&mut self.probes.slur_map, &mut self.probes.fragments, &mut self.stopwords].into_iter().flatten() {
            fix(p);
        }
        self.probes.probe_sets.iter_mut().for_each(fix);
        fix(&mut self.out_dir);
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(a) = &o.active {
            let active = parse_active(a)?;
            let levels: Vec<_> = active
                .iter()
                .map(|c| (c.clone(), self.filters.levels().get(c).copied().unwrap_or(FilterLevel::MAX)))
                .collect();
            self.filters = FilterConfig::new(active, levels).map_err(|e| bad(e.to_string()))?;
        }
        if let Some(l) = &o.level {
            let mut levels = self.filters.levels().clone();
            if l.contains('=') {
                for pair in l.split(',') {
                    let (c, v) = pair.split_once('=').ok_or_else(|| bad(format!("bad level pair {pair:?}")))?;
                    levels.insert(parse_criterion(c)?, parse_level(v)?);
                }
            } else {
                let level = parse_level(l)?;
                for c in self.filters.active() {
                    levels.insert(c.clone(), level);
                }
            }
            self.filters = FilterConfig::new(self.filters.active().clone(), levels).map_err(|e| bad(e.to_string()))?;
        }
        if let Some(r) = &o.rate_limit {
            let (n, window) = parse_rate_limit(r)?;
            self.rate.window_limit = n;
            self.rate.window = window;
        }
        if let Some(e) = &o.endpoint {
            self.endpoint.target = e.trim().to_string();
        }
        if let Some(t) = o.timeout {
            self.timeout = Duration::try_from_secs_f64(t).map_err(|_| bad(format!("bad timeout {t}")))?;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(n) = o.limit {
            self.limit = Some(n);
        }
        if let Some(id) = &o.run_id {
            self.run_id = id.clone();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty()
            || !self.run_id.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
            || self.run_id.starts_with('.')
        {
            return Err(bad(format!("run id {:?} must be non-empty [A-Za-z0-9._-]", self.run_id)));
        }
        self.rate.validate().map_err(|e| bad(e.to_string()))?;
        if self.timeout.is_zero() {
            return Err(bad("timeout must be positive"));
        }
        if self.session_size == 0 {
            return Err(bad("session_size must be positive"));
        }
        let mut names = BTreeSet::new();
        for c in &self.corpora {
            if c.name.is_empty() || !names.insert(c.name.as_str()) {
                return Err(bad(format!("corpus names must be unique and non-empty ({:?})", c.name)));
            }
            must_exist(&c.path)?;
            if let Some(MappingRef::File(p)) = c.mapping_ref()? {
                must_exist(&p)?;
            }
        }
        if self.endpoint.is_loopback() {
            match &self.endpoint.lexicon {
                Some(p) => must_exist(p)?,
                None => return Err(bad("loopback endpoint needs a lexicon")),
            }
        } else if !self.endpoint.target.contains(':') {
            return Err(bad(format!("endpoint {:?} is neither loopback nor host:port", self.endpoint.target)));
        }
        let p = &self.probes;
        for path in [&p.slur_map, &p.fragments, &self.stopwords].into_iter().flatten().chain(&p.probe_sets) {
            must_exist(path)?;
        }
        Ok(())
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig { rate: self.rate.clone(), timeout: self.timeout, jitter_bound: self.jitter_bound }
    }

    /// Hex SHA-256 of the canonical serialization, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }
}

fn must_exist(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(bad(format!("{} does not exist", p.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RunConfig {
        RunConfig::from_json(r#"{"run_id":"t"}"#).unwrap()
    }

    #[test]
    fn defaults() {
        let c = minimal();
        assert_eq!(c.filters, FilterConfig::all_builtin(FilterLevel::MAX));
        assert_eq!(c.rate, RateConfig::default());
        assert_eq!(c.timeout, Duration::from_secs(10));
        assert_eq!(c.jitter_bound, Duration::from_millis(100));
        assert!(c.endpoint.is_loopback());
        assert_eq!(c.session_size, 200);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"run_id":"t","bogus":1}"#).is_err());
    }

    #[test]
    fn overrides() {
        let mut c = minimal();
        let o = Overrides {
            active: Some("RER,misogyny".into()),
            level: Some("RER=2".into()),
            rate_limit: Some("10/15".into()),
            endpoint: Some("127.0.0.1:9".into()),
            timeout: Some(2.5),
            ..Default::default()
        };
        c.apply(&o).unwrap();
        assert_eq!(c.filters.active().len(), 2);
        assert_eq!(c.filters.effective_level(&FilterCriterion::Rer).get(), 2);
        assert_eq!(c.filters.effective_level(&FilterCriterion::Misogyny).get(), 4);
        assert_eq!(c.rate.window_limit, 10);
        assert_eq!(c.rate.window, Duration::from_secs(15));
        assert_eq!(c.endpoint.target, "127.0.0.1:9");
        assert_eq!(c.timeout, Duration::from_millis(2500));

        c.apply(&Overrides { level: Some("1".into()), ..Default::default() }).unwrap();
        assert!(c.filters.levels().values().all(|l| l.get() == 1));
        assert!(c.apply(&Overrides { level: Some("5".into()), ..Default::default() }).is_err());
        assert!(c.apply(&Overrides { rate_limit: Some("ten".into()), ..Default::default() }).is_err());
    }

    #[test]
    fn validation() {
        let mut c = minimal();
        assert!(c.validate().is_err(), "loopback without lexicon");
        c.endpoint.target = "localhost:1".into();
        c.validate().unwrap();
        c.run_id = "../x".into();
        assert!(c.validate().is_err());
        c.run_id = "ok".into();
        c.corpora.push(CorpusSource {
            name: "a".into(),
            path: "/nonexistent/file.jsonl".into(),
            kind: None,
            columns: Default::default(),
            threshold: None,
            subset_threshold: None,
            mapping: None,
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_out_dir_only() {
        let a = minimal();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn mapping_refs() {
        let mut s = CorpusSource {
            name: "a".into(),
            path: "x".into(),
            kind: Some(DatasetKind::Sbic),
            columns: Default::default(),
            threshold: None,
            subset_threshold: None,
            mapping: None,
        };
        assert_eq!(s.mapping_ref().unwrap(), Some(MappingRef::Builtin(DatasetKind::Sbic)));
        s.mapping = Some("builtin:dynahate".into());
        assert_eq!(s.mapping_ref().unwrap(), Some(MappingRef::Builtin(DatasetKind::DynaHate)));
        s.mapping = Some("m.json".into());
        assert_eq!(s.mapping_ref().unwrap(), Some(MappingRef::File("m.json".into())));
        s.kind = None;
        s.mapping = None;
        assert_eq!(s.mapping_ref().unwrap(), None);
    }
}
