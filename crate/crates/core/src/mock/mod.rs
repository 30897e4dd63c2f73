//! Reference simulator of a layered moderation service: a service-level
//! pre-filter blocklist in front of leveled channel filters, served over the
//! line-delimited JSON protocol in [`crate::wire`].

mod lexicon;
mod moderator;
mod normalize;
mod server;

use thiserror::Error;

pub use lexicon::{Lexicon, LexiconEntry};
pub use moderator::{moderate, ChannelConfig, ChannelState};
pub use normalize::{nfc, normalize, tokenize_nfc, Token};
pub use server::MockService;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MockError {
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("channel config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}
