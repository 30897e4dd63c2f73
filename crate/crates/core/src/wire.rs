//! Line-delimited JSON frames spoken between harness clients and the mock
//! moderation service. One frame per line, tagged by `type`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{FilterCriterion, FilterLevel, Fragment, ModerationCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// Messages that reached the chat.
    Chat,
    /// Moderation events for held messages.
    Automod,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientFrame {
    Send {
        channel: String,
        id: String,
        text: String,
    },
    Subscribe {
        channel: String,
        stream: StreamKind,
    },
    /// Replace the channel's filter config. Takes effect from the next message.
    Configure {
        channel: String,
        #[serde(default)]
        active: Vec<FilterCriterion>,
        #[serde(default)]
        levels: BTreeMap<FilterCriterion, FilterLevel>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireFragment {
    pub text: String,
    pub category: String,
}

impl From<&Fragment> for WireFragment {
    fn from(f: &Fragment) -> Self {
        WireFragment {
            text: f.text.clone(),
            category: f.category.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Chat {
        channel: String,
        /// Absent when the platform echoes text only.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        text: String,
    },
    AutomodEvent {
        channel: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        text: String,
        category: String,
        topics: Vec<String>,
        fragments: Vec<WireFragment>,
        level: u8,
    },
    Subscribed {
        channel: String,
        stream: StreamKind,
    },
    Configured {
        channel: String,
    },
    Error {
        reason: String,
    },
}

impl ServerFrame {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames always serialize");
        s.push('\n');
        s
    }
}

impl ClientFrame {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames always serialize");
        s.push('\n');
        s
    }
}

/// Decoded event payload, shared by the mock and transport.
pub fn event_fragments(fragments: &[WireFragment]) -> Vec<Fragment> {
    fragments
        .iter()
        .map(|f| Fragment {
            text: f.text.clone(),
            category: f
                .category
                .parse()
                .unwrap_or_else(|_| ModerationCategory::Custom(f.category.clone())),
        })
        .collect()
}
