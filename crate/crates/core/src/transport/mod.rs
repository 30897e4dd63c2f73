//! Client side of an audit session: a rate-limited sender, an echo reader and
//! a moderation-event reader, producing three timestamped raw logs.

mod adapter;
mod logs;
mod schedule;
mod session;

use std::fmt;
use std::time::Duration;

use thiserror::Error;

use crate::model::MessageId;

pub use adapter::{
    Connection, Connector, Echo, EchoSource, EventSource, LoopbackConnector, MessageSender,
    ModerationEvent, TcpConnector,
};
pub use logs::{EchoEntry, EventEntry, RawLogs, SentEntry};
pub use schedule::{max_in_window, schedule, PauseMode, RateConfig};
pub use session::{run_session, SessionConfig};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("rate config: {0}")]
    Config(String),
    #[error("connect failed: {0}")]
    Connect(String),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("send of {id} was {jitter:?} off schedule (bound {bound:?})")]
    Jitter {
        id: MessageId,
        jitter: Duration,
        bound: Duration,
    },
}

/// A failed session, with whatever was logged before the failure.
#[derive(Debug, Clone)]
pub struct SessionError {
    pub error: TransportError,
    pub partial: RawLogs,
}

impl SessionError {
    pub fn new(error: TransportError, partial: RawLogs) -> Self {
        SessionError { error, partial }
    }
}

impl fmt::Display for SessionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} messages sent)", self.error, self.partial.sent.len())
    }
}

impl std::error::Error for SessionError {}
