use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::lexicon::Lexicon;
use super::normalize::{nfc, tokenize_nfc};
use super::MockError;
use crate::model::{CategoryMap, FilterConfig, Fragment, Outcome};

/// Channel config file: `{channel, active:[...], levels:{...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub channel: String,
    #[serde(flatten)]
    pub filters: FilterConfig,
    /// Match pre-filter terms as raw, case-sensitive substrings instead of
    /// normalized n-grams.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub prefilter_raw: bool,
}

impl ChannelConfig {
    pub fn load(path: &Path) -> Result<Self, MockError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| MockError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| MockError::Config(e.to_string()))
    }
}

/// Everything `moderate` needs for one channel. Immutable once built; a
/// reconfiguration swaps in a whole new state.
#[derive(Debug, Clone)]
pub struct ChannelState {
    pub channel: String,
    pub config: FilterConfig,
    pub lexicon: Arc<Lexicon>,
    pub categories: CategoryMap,
    pub prefilter_raw: bool,
}

impl ChannelState {
    pub fn new(channel: impl Into<String>, config: FilterConfig, lexicon: Arc<Lexicon>) -> Self {
        ChannelState {
            channel: channel.into(),
            config,
            lexicon,
            categories: CategoryMap::default(),
            prefilter_raw: false,
        }
    }

    pub fn from_config(cfg: ChannelConfig, lexicon: Arc<Lexicon>) -> Self {
        let mut state = ChannelState::new(cfg.channel, cfg.filters, lexicon);
        state.prefilter_raw = cfg.prefilter_raw;
        state
    }

    pub fn with_config(&self, config: FilterConfig) -> Self {
        ChannelState {
            config,
            ..self.clone()
        }
    }
}

/// Route one message through the pre-filter and the channel filters.
///
/// Pre-filter hits win regardless of the channel config. Among eligible
/// channel terms the earliest match wins, then lexicon order. Fragments list
/// every eligible match in text order.
pub fn moderate(text: &str, state: &ChannelState) -> Outcome {
    let text = nfc(text);
    let tokens = tokenize_nfc(&text);
    let norms: Vec<String> = tokens.iter().map(|t| t.norm.clone()).collect();
    let lexicon = &*state.lexicon;

    if state.prefilter_raw {
        if lexicon
            .entries
            .iter()
            .any(|c| c.entry.prefilter && text.contains(c.entry.term.as_str()))
        {
            return Outcome::PreFiltered;
        }
    } else {
        for pos in 0..norms.len() {
            if lexicon.matches_at(&norms, pos).any(|(_, c)| c.entry.prefilter) {
                return Outcome::PreFiltered;
            }
        }
    }

    let mut hits = Vec::new();
    for pos in 0..norms.len() {
        for (idx, c) in lexicon.matches_at(&norms, pos) {
            if c.entry.prefilter {
                continue;
            }
            let Ok(criterion) = state.categories.criterion_for(&c.entry.category) else {
                continue;
            };
            if state.config.is_active(&criterion)
                && state.config.effective_level(&criterion) >= c.entry.min_level
            {
                let last = pos + c.tokens.len() - 1;
                hits.push((pos, idx, tokens[pos].start, tokens[last].end));
            }
        }
    }
    // Hits are generated in (position, load order), so the first one wins.
    let Some(&(_, winner, _, _)) = hits.first() else {
        return Outcome::Passed;
    };
    let mut fragments: Vec<Fragment> = Vec::with_capacity(hits.len());
    let mut seen = Vec::new();
    for (_, idx, start, end) in &hits {
        let category = lexicon.entries[*idx].entry.category.clone();
        if seen.contains(&(*start, *end, category.clone())) {
            continue;
        }
        seen.push((*start, *end, category.clone()));
        fragments.push(Fragment {
            text: text[*start..*end].to_string(),
            category,
        });
    }
    let entry = &lexicon.entries[winner].entry;
    Outcome::Moderated {
        category: entry.category.clone(),
        fragments,
        level: entry.min_level,
    }
}
