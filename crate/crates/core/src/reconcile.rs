//! Fuse the three raw streams of a session into one outcome per sent
//! message. Pre-filtering is never observed directly: it is inferred from
//! absence on both streams once the timeout has passed.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::durations::micros;
use crate::model::{MessageId, Outcome};
use crate::transport::{EchoEntry, EventEntry, RawLogs, SentEntry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub run_id: String,
    pub id: MessageId,
    pub text: String,
    pub outcome: Outcome,
    /// Send to first observation; absent for pre-filtered messages.
    #[serde(default, with = "micros::option", rename = "latency_us", skip_serializing_if = "Option::is_none")]
    pub latency: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ConflictKind {
    /// Echoed and moderated.
    BothStreams,
    DuplicateSend,
    DuplicateEcho,
    DuplicateEvent,
    /// Observed on a stream but never sent.
    UnknownId,
    ObservedBeforeSend,
    TextMismatch,
    MalformedEvent(String),
}

/// A message whose observations break the outcome partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub run_id: String,
    pub id: MessageId,
    pub kinds: Vec<ConflictKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub records: Vec<OutcomeRecord>,
    pub conflicts: Vec<Conflict>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReconcileError {
    #[error("{} message(s) neither observed nor timed out: {pending:?}", pending.len())]
    Incomplete { pending: Vec<MessageId> },
}

fn group<T>(entries: &[T], id: impl Fn(&T) -> &MessageId) -> BTreeMap<&MessageId, Vec<&T>> {
    let mut map: BTreeMap<&MessageId, Vec<&T>> = BTreeMap::new();
    for e in entries {
        map.entry(id(e)).or_default().push(e);
    }
    map
}

fn event_problems(sent_text: &str, ev: &EventEntry) -> Option<String> {
    if ev.fragments.is_empty() {
        return Some("event without fragments".into());
    }
    ev.fragments
        .iter()
        .find(|f| !sent_text.contains(f.text.as_str()))
        .map(|f| format!("fragment {:?} is not part of the message", f.text))
}

pub fn reconcile(logs: &RawLogs, timeout: Duration, run_id: &str) -> Result<Reconciliation, ReconcileError> {
    let sent = group(&logs.sent, |s: &SentEntry| &s.id);
    let echoes = group(&logs.echoes, |e: &EchoEntry| &e.id);
    let events = group(&logs.events, |e: &EventEntry| &e.id);

    let mut out = Reconciliation::default();
    let mut pending = Vec::new();

    let mut order: Vec<(&MessageId, &Vec<&SentEntry>)> = sent.iter().map(|(k, v)| (*k, v)).collect();
    order.sort_by_key(|(id, entries)| (entries.iter().map(|e| e.sent_at).min(), *id));

    for (id, sends) in order {
        let first_send = sends.iter().min_by_key(|s| s.sent_at).expect("grouped entries are non-empty");
        let echo = echoes.get(id).map(Vec::as_slice).unwrap_or_default();
        let event = events.get(id).map(Vec::as_slice).unwrap_or_default();

        let mut kinds = BTreeSet::new();
        if sends.len() > 1 {
            kinds.insert(ConflictKind::DuplicateSend);
        }
        if echo.len() > 1 {
            kinds.insert(ConflictKind::DuplicateEcho);
        }
        if event.len() > 1 {
            kinds.insert(ConflictKind::DuplicateEvent);
        }
        if !echo.is_empty() && !event.is_empty() {
            kinds.insert(ConflictKind::BothStreams);
        }
        let observed = echo.iter().map(|e| (e.recv_at, e.text.as_str())).chain(event.iter().map(|e| (e.recv_at, e.text.as_str())));
        for (recv_at, text) in observed {
            if recv_at < first_send.sent_at {
                kinds.insert(ConflictKind::ObservedBeforeSend);
            }
            if text != first_send.text {
                kinds.insert(ConflictKind::TextMismatch);
            }
        }
        for ev in event {
            if let Some(problem) = event_problems(&first_send.text, ev) {
                kinds.insert(ConflictKind::MalformedEvent(problem));
            }
        }
        if !kinds.is_empty() {
            out.conflicts.push(Conflict {
                run_id: run_id.to_string(),
                id: id.clone(),
                kinds: kinds.into_iter().collect(),
            });
            continue;
        }

        let (outcome, latency) = if let [e] = echo {
            (Outcome::Passed, Some(e.recv_at - first_send.sent_at))
        } else if let [ev] = event {
            (
                Outcome::Moderated {
                    category: ev.category.clone(),
                    fragments: ev.fragments.clone(),
                    level: ev.level,
                },
                Some(ev.recv_at - first_send.sent_at),
            )
        } else if logs.ended_at.saturating_sub(first_send.sent_at) >= timeout {
            (Outcome::PreFiltered, None)
        } else {
            pending.push(id.clone());
            continue;
        };
        out.records.push(OutcomeRecord {
            run_id: run_id.to_string(),
            id: id.clone(),
            text: first_send.text.clone(),
            outcome,
            latency,
        });
    }

    for id in echoes.keys().chain(events.keys()) {
        if !sent.contains_key(id) && !out.conflicts.iter().any(|c| &c.id == *id) {
            out.conflicts.push(Conflict {
                run_id: run_id.to_string(),
                id: (*id).clone(),
                kinds: vec![ConflictKind::UnknownId],
            });
        }
    }

    if pending.is_empty() {
        Ok(out)
    } else {
        Err(ReconcileError::Incomplete { pending })
    }
}
