use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Notify};
use tokio::time::{sleep_until, Instant};

use super::adapter::{Connector, EchoSource, EventSource, MessageSender};
use super::logs::{EchoEntry, EventEntry, RawLogs, SentEntry};
use super::schedule::{schedule, RateConfig};
use super::{SessionError, TransportError};
use crate::durations::{micros, secs, to_micros_grid};
use crate::model::{Message, MessageId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub rate: RateConfig,
    /// How long to keep listening after the last send.
    #[serde(with = "secs")]
    pub timeout: Duration,
    /// Largest tolerated gap between planned and actual send time.
    #[serde(with = "micros")]
    pub jitter_bound: Duration,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            rate: RateConfig::default(),
            timeout: Duration::from_secs(10),
            jitter_bound: Duration::from_millis(100),
        }
    }
}

/// Ids still waiting for an echo or event, shared by the two readers.
#[derive(Default)]
struct Resolver {
    registered: HashSet<MessageId>,
    pending: HashSet<MessageId>,
    /// Unresolved ids per text, oldest first, for id-less echoes.
    by_text: HashMap<String, VecDeque<MessageId>>,
}

impl Resolver {
    fn register(&mut self, id: &MessageId, text: &str) {
        self.registered.insert(id.clone());
        self.pending.insert(id.clone());
        self.by_text.entry(text.to_string()).or_default().push_back(id.clone());
    }

    fn resolve(&mut self, id: &MessageId) -> bool {
        self.pending.remove(id)
    }

    /// FIFO match on exact text.
    fn resolve_text(&mut self, text: &str) -> Option<MessageId> {
        let queue = self.by_text.get_mut(text)?;
        while let Some(id) = queue.pop_front() {
            if self.pending.remove(&id) {
                return Some(id);
            }
        }
        None
    }
}

struct Shared {
    resolver: Mutex<Resolver>,
    changed: Notify,
    start: Instant,
}

impl Shared {
    fn now(&self) -> Duration {
        to_micros_grid(Instant::now() - self.start)
    }

    fn all_resolved(&self) -> bool {
        self.resolver.lock().unwrap().pending.is_empty()
    }
}

struct SendOutcome {
    log: Vec<SentEntry>,
    sender: Box<dyn MessageSender>,
    error: Option<TransportError>,
}

async fn send_all(
    shared: Arc<Shared>,
    mut sender: Box<dyn MessageSender>,
    messages: Vec<(MessageId, String)>,
    offsets: Vec<Duration>,
    cfg: SessionConfig,
) -> SendOutcome {
    let mut log = Vec::with_capacity(messages.len());
    let mut recent: VecDeque<Instant> = VecDeque::new();
    for ((id, text), offset) in messages.into_iter().zip(offsets) {
        sleep_until(shared.start + offset).await;
        // Guard the sliding window on actual send times, whatever the planner did.
        loop {
            let now = Instant::now();
            while recent.front().is_some_and(|t| now.duration_since(*t) >= cfg.rate.window) {
                recent.pop_front();
            }
            if recent.len() < cfg.rate.window_limit as usize {
                break;
            }
            sleep_until(*recent.front().unwrap() + cfg.rate.window).await;
        }
        shared.resolver.lock().unwrap().register(&id, &text);
        let now = Instant::now();
        let entry = SentEntry {
            id: id.clone(),
            text: text.clone(),
            scheduled: offset,
            sent_at: to_micros_grid(now - shared.start),
        };
        let jitter = entry.jitter();
        log.push(entry);
        recent.push_back(now);
        if let Err(e) = sender.send(&id, &text).await {
            return SendOutcome { log, sender, error: Some(e) };
        }
        if jitter > cfg.jitter_bound {
            let error = TransportError::Jitter { id, jitter, bound: cfg.jitter_bound };
            return SendOutcome { log, sender, error: Some(error) };
        }
    }
    SendOutcome { log, sender, error: None }
}

async fn read_echoes(
    shared: Arc<Shared>,
    mut source: Box<dyn EchoSource>,
    mut stop: watch::Receiver<bool>,
) -> (Vec<EchoEntry>, Option<TransportError>) {
    let mut log = Vec::new();
    let mut seen = HashSet::new();
    loop {
        let next = tokio::select! {
            _ = stop.changed() => return (log, None),
            next = source.next_echo() => next,
        };
        let echo = match next {
            Ok(Some(e)) => e,
            Ok(None) => {
                return (log, Some(TransportError::ConnectionLost("echo stream closed".into())))
            }
            Err(e) => return (log, Some(e)),
        };
        let recv_at = shared.now();
        let id = {
            let mut r = shared.resolver.lock().unwrap();
            match echo.id {
                Some(id) => {
                    if !r.registered.contains(&id) {
                        debug!("ignoring echo for foreign id {id}");
                        continue;
                    }
                    if !seen.insert(id.clone()) {
                        return (log, Some(TransportError::Protocol(format!("duplicate echo for id {id}"))));
                    }
                    r.resolve(&id);
                    id
                }
                None => match r.resolve_text(&echo.text) {
                    Some(id) => {
                        seen.insert(id.clone());
                        id
                    }
                    None => {
                        debug!("ignoring unmatched text echo {:?}", echo.text);
                        continue;
                    }
                },
            }
        };
        log.push(EchoEntry { id, text: echo.text, recv_at });
        shared.changed.notify_waiters();
    }
}

async fn read_events(
    shared: Arc<Shared>,
    mut source: Box<dyn EventSource>,
    mut stop: watch::Receiver<bool>,
) -> (Vec<EventEntry>, Option<TransportError>) {
    let mut log = Vec::new();
    let mut seen = HashSet::new();
    loop {
        let next = tokio::select! {
            _ = stop.changed() => return (log, None),
            next = source.next_event() => next,
        };
        let ev = match next {
            Ok(Some(e)) => e,
            Ok(None) => {
                return (log, Some(TransportError::ConnectionLost("event stream closed".into())))
            }
            Err(e) => return (log, Some(e)),
        };
        let recv_at = shared.now();
        let id = {
            let mut r = shared.resolver.lock().unwrap();
            match ev.id {
                Some(id) => {
                    if !r.registered.contains(&id) {
                        debug!("ignoring event for foreign id {id}");
                        continue;
                    }
                    if !seen.insert(id.clone()) {
                        return (log, Some(TransportError::Protocol(format!("duplicate event for id {id}"))));
                    }
                    r.resolve(&id);
                    id
                }
                None => match r.resolve_text(&ev.text) {
                    Some(id) => id,
                    None => continue,
                },
            }
        };
        log.push(EventEntry {
            id,
            text: ev.text,
            category: ev.category,
            topics: ev.topics,
            fragments: ev.fragments,
            level: ev.level,
            recv_at,
        });
        shared.changed.notify_waiters();
    }
}

/// Send every message once on its planned offset while consuming the echo and
/// event streams concurrently, then keep listening until every id is
/// resolved or `timeout` has elapsed since the last send.
pub async fn run_session(
    messages: &[Message],
    connector: &dyn Connector,
    channel: &str,
    cfg: &SessionConfig,
) -> Result<RawLogs, SessionError> {
    let mut ids = HashSet::new();
    for m in messages {
        if !ids.insert(&m.id) {
            return Err(SessionError::new(
                TransportError::Protocol(format!("duplicate input id {}", m.id)),
                RawLogs::default(),
            ));
        }
    }
    let offsets = schedule(messages.len(), &cfg.rate).map_err(|e| SessionError::new(e, RawLogs::default()))?;
    if messages.is_empty() {
        return Ok(RawLogs::default());
    }
    let conn = connector
        .connect(channel)
        .await
        .map_err(|e| SessionError::new(e, RawLogs::default()))?;

    let shared = Arc::new(Shared {
        resolver: Mutex::new(Resolver::default()),
        changed: Notify::new(),
        start: Instant::now(),
    });
    let (stop_tx, stop_rx) = watch::channel(false);
    let echo_task = tokio::spawn(read_echoes(shared.clone(), conn.echoes, stop_rx.clone()));
    let event_task = tokio::spawn(read_events(shared.clone(), conn.events, stop_rx));
    let payload: Vec<_> = messages.iter().map(|m| (m.id.clone(), m.text.clone())).collect();
    let send_task = tokio::spawn(send_all(shared.clone(), conn.sender, payload, offsets, cfg.clone()));

    let sent = send_task.await.expect("sender task panicked");
    let mut error = sent.error;
    if error.is_none() {
        let deadline = Instant::now() + cfg.timeout;
        loop {
            let notified = shared.changed.notified();
            if shared.all_resolved() || echo_task.is_finished() || event_task.is_finished() {
                break;
            }
            tokio::select! {
                _ = notified => {}
                _ = sleep_until(deadline) => break,
            }
        }
    }
    let ended_at = shared.now();
    let _ = stop_tx.send(true);
    let (echoes, echo_err) = echo_task.await.expect("echo task panicked");
    let (events, event_err) = event_task.await.expect("event task panicked");
    drop(sent.sender);
    error = error.or(echo_err).or(event_err);

    let logs = RawLogs { sent: sent.log, echoes, events, ended_at };
    match error {
        Some(e) => {
            warn!("session on {channel} failed: {e}");
            Err(SessionError::new(e, logs))
        }
        None => Ok(logs),
    }
}
