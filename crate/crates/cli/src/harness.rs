//! Runs one stage of a recipe: sessions against the target, raw logs to
//! disk, reconciliation, resume.

use std::collections::HashSet;
use std::sync::Arc;

use log::{info, warn};
use modaudit_core::mock::{ChannelState, Lexicon};
use modaudit_core::transport::{run_session, LoopbackConnector, RawLogs, SessionError, TcpConnector};
use modaudit_core::{reconcile, FilterConfig, Message, MessageId, OutcomeRecord, ReconcileError};
use tokio::runtime::{Builder, Runtime};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::rundir::{Manifest, RunDir, StageEntry};

pub struct Harness {
    pub cfg: RunConfig,
    pub dir: RunDir,
    manifest: Manifest,
    runtime: Runtime,
    lexicon: Option<Arc<Lexicon>>,
}

impl Harness {
    pub fn new(cfg: RunConfig, dir: RunDir) -> Result<Self> {
        let manifest = dir.manifest()?;
        let (runtime, lexicon) = if cfg.endpoint.is_loopback() {
            let path = cfg.endpoint.lexicon.as_ref().ok_or_else(|| CliError::Config("loopback needs a lexicon".into()))?;
            let lexicon = Lexicon::load(path).map_err(|e| CliError::Config(e.to_string()))?;
            // Loopback sessions run on a virtual clock: pacing and timeouts cost no wall time.
            let rt = Builder::new_current_thread().enable_all().start_paused(true).build();
            (rt, Some(Arc::new(lexicon)))
        } else {
            (Builder::new_multi_thread().enable_all().build(), None)
        };
        let runtime = runtime.map_err(|e| CliError::Io(format!("runtime: {e}")))?;
        Ok(Harness { cfg, dir, manifest, runtime, lexicon })
    }

    pub fn stage_run_id(&self, stage: &str) -> String {
        format!("{}:{stage}", self.cfg.run_id)
    }

    /// Send `messages` under `filters`, skipping ids this stage already
    /// resolved, and return the stage's records in `messages` order.
    /// Ids that ended in a conflict have no record.
    pub fn run_stage(&mut self, stage: &str, filters: &FilterConfig, messages: &[Message]) -> Result<Vec<OutcomeRecord>> {
        let run_id = self.stage_run_id(stage);
        self.dir.register_messages(messages)?;
        let done = self.dir.resolved(&run_id)?;
        let todo: Vec<Message> = messages.iter().filter(|m| !done.contains(&m.id)).cloned().collect();
        if !done.is_empty() {
            info!("{run_id}: {} already resolved, {} to send", messages.len() - todo.len(), todo.len());
        }
        let size = self.cfg.session_size;
        for (i, chunk) in todo.chunks(size).enumerate() {
            info!("{run_id}: session {} of {} ({} messages)", i + 1, todo.len().div_ceil(size), chunk.len());
            self.run_chunk(&run_id, filters, chunk)?;
        }

        let mut by_id = self.dir.records_for(&run_id)?;
        let records: Vec<OutcomeRecord> = messages.iter().filter_map(|m| by_id.remove(&m.id)).collect();
        let conflicts = self.dir.conflicts()?.into_iter().filter(|c| c.run_id == run_id).count();
        if conflicts > 0 {
            warn!("{run_id}: {conflicts} message(s) ended in a conflict; see conflicts.jsonl");
        }
        let entry = StageEntry {
            stage: stage.to_string(),
            run_id,
            filters: filters.clone(),
            messages: messages.len(),
            records: records.len(),
            conflicts,
        };
        match self.manifest.stages.iter_mut().find(|s| s.stage == stage) {
            Some(s) => *s = entry,
            None => self.manifest.stages.push(entry),
        }
        self.dir.write_manifest(&self.manifest)?;
        Ok(records)
    }

    fn run_chunk(&mut self, run_id: &str, filters: &FilterConfig, chunk: &[Message]) -> Result<()> {
        let session = self.dir.next_session();
        let outcome = self.runtime.block_on(session_once(&self.cfg, self.lexicon.clone(), filters, chunk));
        let (logs, failure) = match outcome {
            Ok(logs) => (logs, None),
            Err(e) => (e.partial, Some(e.error.to_string())),
        };
        self.dir.append_logs(run_id, session, &logs, failure.clone())?;
        let rec = match reconcile(&logs, self.cfg.timeout, run_id) {
            Ok(rec) => rec,
            Err(ReconcileError::Incomplete { pending }) => {
                // Cut short: settle what was observed, leave the rest for resume.
                let pending: HashSet<MessageId> = pending.into_iter().collect();
                let mut settled = logs.clone();
                settled.sent.retain(|s| !pending.contains(&s.id));
                warn!("{run_id}: {} message(s) unresolved in session {session}", pending.len());
                reconcile(&settled, self.cfg.timeout, run_id).expect("pending ids removed")
            }
        };
        self.dir.append_reconciliation(&rec)?;
        match failure {
            Some(e) => Err(CliError::Session(format!(
                "{run_id} session {session}: {e}; {} records kept, re-run to resume",
                rec.records.len()
            ))),
            None => Ok(()),
        }
    }

    /// Mark the run complete in its manifest.
    pub fn finish(&mut self) -> Result<()> {
        self.manifest.complete = true;
        self.dir.write_manifest(&self.manifest)
    }
}

async fn session_once(
    cfg: &RunConfig,
    lexicon: Option<Arc<Lexicon>>,
    filters: &FilterConfig,
    chunk: &[Message],
) -> std::result::Result<RawLogs, SessionError> {
    let channel = &cfg.endpoint.channel;
    let session = cfg.session();
    match lexicon {
        Some(lexicon) => {
            let mut state = ChannelState::new(channel.clone(), filters.clone(), lexicon);
            state.prefilter_raw = cfg.endpoint.prefilter_raw;
            run_session(chunk, &LoopbackConnector::new(state), channel, &session).await
        }
        None => {
            let conn = TcpConnector::new(cfg.endpoint.target.clone());
            conn.configure(channel, filters).await.map_err(|e| SessionError::new(e, RawLogs::default()))?;
            run_session(chunk, &conn, channel, &session).await
        }
    }
}
