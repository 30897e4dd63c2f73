use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::durations::micros;
use crate::model::{FilterLevel, Fragment, MessageId, ModerationCategory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentEntry {
    pub id: MessageId,
    pub text: String,
    /// Planned offset from session start.
    #[serde(with = "micros", rename = "scheduled_us")]
    pub scheduled: Duration,
    #[serde(with = "micros", rename = "sent_us")]
    pub sent_at: Duration,
}

impl SentEntry {
    pub fn jitter(&self) -> Duration {
        self.sent_at.abs_diff(self.scheduled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EchoEntry {
    pub id: MessageId,
    pub text: String,
    #[serde(with = "micros", rename = "recv_us")]
    pub recv_at: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventEntry {
    pub id: MessageId,
    pub text: String,
    pub category: ModerationCategory,
    #[serde(default)]
    pub topics: Vec<String>,
    pub fragments: Vec<Fragment>,
    pub level: FilterLevel,
    #[serde(with = "micros", rename = "recv_us")]
    pub recv_at: Duration,
}

/// The three raw observation streams of one session. Times are offsets from
/// session start.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLogs {
    pub sent: Vec<SentEntry>,
    pub echoes: Vec<EchoEntry>,
    pub events: Vec<EventEntry>,
    #[serde(with = "micros", rename = "ended_us")]
    pub ended_at: Duration,
}

impl RawLogs {
    pub fn is_empty(&self) -> bool {
        self.sent.is_empty() && self.echoes.is_empty() && self.events.is_empty()
    }

    pub fn max_jitter(&self) -> Duration {
        self.sent.iter().map(SentEntry::jitter).max().unwrap_or_default()
    }

    pub fn send_times(&self) -> Vec<Duration> {
        self.sent.iter().map(|s| s.sent_at).collect()
    }
}
