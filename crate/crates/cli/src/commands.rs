use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use log::info;
use modaudit_core::datasets::{self, write_corpus, DatasetKind, DatasetSpec, MappingTable, Subset};
use modaudit_core::metrics::{confusion_of, rates_for, write_reports_csv, MetricsReport, DEFAULT_DECIMALS};
use modaudit_core::mock::{ChannelConfig, ChannelState, Lexicon, MockService};
use modaudit_core::{Message, OutcomeRecord};
use tokio::net::TcpListener;

use crate::config::{Overrides, RunConfig};
use crate::corpus::{corpus_hash, file_hash, load_corpora};
use crate::error::{CliError, Result};
use crate::harness::Harness;
use crate::recipes::{run_recipe, RECIPES};
use crate::rundir::{read_jsonl, Manifest, RunDir};

#[derive(Debug, Parser)]
#[command(name = "modaudit", version, about = "Black-box audits of layered chat moderation")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the moderation simulator over TCP.
    Serve(ServeArgs),
    /// Run an experiment recipe.
    Run(RunArgs),
    /// Score an outcome log against labels.
    Score(ScoreArgs),
    /// Recompute per-stage reports for a run directory.
    Report(ReportArgs),
    /// Convert a raw dataset file into a labeled JSONL corpus.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub channel_config: PathBuf,
    pub lexicon: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub addr: String,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = PossibleValuesParser::new(RECIPES))]
    pub recipe: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub records: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Only score records of this run id.
    #[arg(long = "run-id")]
    pub run_id: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub run_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub kind: DatasetKind,
    #[arg(long)]
    pub path: PathBuf,
    /// SBIC offensiveness threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write JSONL here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mapping file; defaults to the shipped table for the kind.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Keep only this filter or community subset.
    #[arg(long)]
    pub subset: Option<String>,
    /// Print subset sizes instead of the corpus.
    #[arg(long)]
    pub counts: bool,
}

pub fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Serve(a) => serve(a, stdout),
        Command::Run(a) => run(a, stdout),
        Command::Score(a) => score(a, stdout),
        Command::Report(a) => report(a, stdout),
        Command::Ingest(a) => ingest(a, stdout),
    }
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Io(format!("stdout: {e}"))
}

fn serve(a: ServeArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = ChannelConfig::load(&a.channel_config).map_err(|e| CliError::Config(e.to_string()))?;
    let lexicon = Lexicon::load(&a.lexicon).map_err(|e| CliError::Config(e.to_string()))?;
    let state = ChannelState::from_config(cfg, Arc::new(lexicon));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(async {
        let listener = TcpListener::bind(&a.addr).await.map_err(|e| CliError::Session(format!("bind {}: {e}", a.addr)))?;
        let local = listener.local_addr().map_err(|e| CliError::Session(e.to_string()))?;
        writeln!(stdout, "listening on {local} channel {}", state.channel).and_then(|_| stdout.flush()).map_err(out_err)?;
        MockService::new([state]).serve(listener).await.map_err(|e| CliError::Session(format!("serve: {e}")))
    })
}

fn run(a: RunArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config, &a.overrides)?;
    if let Some(r) = a.recipe {
        cfg.recipe = Some(r);
    }
    let recipe = cfg.recipe.clone().ok_or_else(|| CliError::Config("no recipe given (--recipe or config)".into()))?;
    if !RECIPES.contains(&recipe.as_str()) {
        return Err(CliError::Config(format!("unknown recipe {recipe:?} (known: {})", RECIPES.join(", "))));
    }
    let corpora = load_corpora(&cfg)?;
    let lexicon_hash = match (&cfg.endpoint.lexicon, cfg.endpoint.is_loopback()) {
        (Some(p), true) => Some(file_hash(p)?),
        _ => None,
    };
    let manifest = Manifest {
        run_id: cfg.run_id.clone(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        recipe: recipe.clone(),
        config_hash: cfg.hash(),
        corpus_hash: corpus_hash(&corpora),
        lexicon_hash,
        config: cfg.clone(),
        stages: Vec::new(),
        complete: false,
    };
    let dir = RunDir::create(cfg.run_dir(), &manifest)?;
    info!("run {} recipe {recipe} in {}", cfg.run_id, dir.root().display());
    let mut h = Harness::new(cfg, dir)?;
    let out = run_recipe(&recipe, &mut h, &corpora)?;
    let stages = stage_reports(&h.dir)?;
    write_stage_reports(&h.dir, &stages)?;
    h.finish()?;
    write!(stdout, "{}", out.summary).map_err(out_err)?;
    writeln!(stdout, "run directory: {}", h.dir.root().display()).map_err(out_err)?;
    for f in &out.files {
        writeln!(stdout, "  {}", f.display()).map_err(out_err)?;
    }
    Ok(())
}

/// One report per stage, in manifest order, scored against the run's messages.
pub fn stage_reports(dir: &RunDir) -> Result<Vec<MetricsReport>> {
    let manifest = dir.manifest()?;
    let messages = dir.messages()?;
    let records = dir.records()?;
    let mut out = Vec::new();
    for stage in &manifest.stages {
        let mut seen = HashSet::new();
        let mine: Vec<OutcomeRecord> =
            records.iter().filter(|r| r.run_id == stage.run_id && seen.insert(&r.id)).cloned().collect();
        let counts = confusion_of(&mine, &messages).map_err(|e| CliError::Scoring(format!("{}: {e}", stage.stage)))?;
        out.push(rates_for(&stage.stage, &counts));
    }
    Ok(out)
}

fn write_stage_reports(dir: &RunDir, reports: &[MetricsReport]) -> Result<()> {
    let mut csv = Vec::new();
    write_reports_csv(&mut csv, reports, DEFAULT_DECIMALS).map_err(|e| CliError::Io(e.to_string()))?;
    dir.write_report("stages.csv", &csv)?;
    dir.write_report("stages.json", &serde_json::to_vec_pretty(reports).expect("report serializes"))?;
    Ok(())
}

fn report(a: ReportArgs, stdout: &mut dyn Write) -> Result<()> {
    let dir = RunDir::open(&a.run_dir)?;
    let reports = stage_reports(&dir)?;
    write_stage_reports(&dir, &reports)?;
    write_reports_csv(&mut *stdout, &reports, DEFAULT_DECIMALS).map_err(|e| CliError::Io(e.to_string()))
}

fn score(a: ScoreArgs, stdout: &mut dyn Write) -> Result<()> {
    let labels = datasets::load_corpus(&a.labels).map_err(|e| CliError::Config(e.to_string()))?;
    if !a.records.exists() {
        return Err(CliError::Config(format!("{} does not exist", a.records.display())));
    }
    let records: Vec<OutcomeRecord> = read_jsonl(&a.records)?;
    let reports = score_records(&records, &labels, a.run_id.as_deref())?;
    if a.json {
        serde_json::to_writer_pretty(&mut *stdout, &reports).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(stdout).map_err(out_err)
    } else {
        write_reports_csv(&mut *stdout, &reports, DEFAULT_DECIMALS).map_err(|e| CliError::Io(e.to_string()))
    }
}

/// One report per run id, in first-seen order.
pub fn score_records(records: &[OutcomeRecord], labels: &[Message], run_id: Option<&str>) -> Result<Vec<MetricsReport>> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if run_id.is_none_or(|id| id == r.run_id) && !order.contains(&r.run_id.as_str()) {
            order.push(&r.run_id);
        }
    }
    if order.is_empty() {
        return Err(CliError::Scoring("no records to score".into()));
    }
    order
        .into_iter()
        .map(|id| {
            let mine: Vec<OutcomeRecord> = records.iter().filter(|r| r.run_id == id).cloned().collect();
            let counts = confusion_of(&mine, labels).map_err(|e| CliError::Scoring(e.to_string()))?;
            Ok(rates_for(id, &counts))
        })
        .collect()
}

fn parse_subset(s: &str, mapping: &MappingTable) -> Subset {
    match s.parse::<modaudit_core::FilterCriterion>() {
        Ok(c) if mapping.criteria().any(|k| *k == c) => Subset::Criterion(c),
        _ => Subset::Community(s.to_string()),
    }
}

fn ingest(a: IngestArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = |e: datasets::DatasetError| CliError::Config(e.to_string());
    let mut spec = DatasetSpec::new(a.kind, &a.path);
    if let Some(t) = a.threshold {
        spec = spec.with_threshold(t);
    }
    let mut messages = datasets::load(&spec).map_err(cfg)?;
    let mapping = match &a.mapping {
        Some(p) => Some(MappingTable::load(p).map_err(cfg)?),
        None => MappingTable::builtin(a.kind),
    };
    if a.counts || a.subset.is_some() {
        let mapping = mapping.ok_or_else(|| CliError::Config(format!("no mapping table for {}", a.kind)))?;
        if a.counts {
            return print_counts(&mapping, &messages, stdout);
        }
        let subset = parse_subset(a.subset.as_deref().unwrap_or_default(), &mapping);
        messages = mapping.extract_subset(&messages, &subset).map_err(cfg)?;
    }
    match &a.out {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| CliError::io(p.display(), e))?;
            write_corpus(std::io::BufWriter::new(f), &messages).map_err(|e| CliError::io(p.display(), e))?;
            info!("wrote {} messages to {}", messages.len(), p.display());
            Ok(())
        }
        None => write_corpus(&mut *stdout, &messages).map_err(out_err),
    }
}

fn print_counts(mapping: &MappingTable, messages: &[Message], stdout: &mut dyn Write) -> Result<()> {
    writeln!(stdout, "subset,count,expected").map_err(out_err)?;
    for (subset, n) in mapping.subset_counts(messages) {
        let expected = mapping.expected(&subset).map(|e| e.to_string()).unwrap_or_default();
        writeln!(stdout, "{subset},{n},{expected}").map_err(out_err)?;
    }
    Ok(())
}

/// Read an existing run directory's messages and records, for tests and tooling.
pub fn load_run(path: &Path) -> Result<(Manifest, Vec<Message>, Vec<OutcomeRecord>)> {
    let dir = RunDir::open(path)?;
    Ok((dir.manifest()?, dir.messages()?, dir.records()?))
}
