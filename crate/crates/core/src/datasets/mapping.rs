use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetKind};
use crate::model::{FilterCriterion, Label, Message};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Standardization {
    pub group: String,
    pub terms: Vec<String>,
}

/// A named set of canonical groups: one filter subset or one community.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSet {
    pub name: String,
    pub groups: Vec<String>,
    /// Subset size reported for the reference corpus, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RawMappingTable {
    dataset: String,
    #[serde(default)]
    standardization: Vec<Standardization>,
    filters: Vec<GroupSet>,
    #[serde(default)]
    communities: Vec<GroupSet>,
}

/// Result of looking a raw target string up in a [`MappingTable`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Target {
    Group(String),
    Unmapped(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subset {
    Criterion(FilterCriterion),
    Community(String),
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Subset::Criterion(c) => write!(f, "{c}"),
            Subset::Community(c) => f.write_str(c),
        }
    }
}

/// Target standardization plus filter and community groupings for one
/// corpus. Lookups are on lowercased, trimmed strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMappingTable", into = "RawMappingTable")]
pub struct MappingTable {
    raw: RawMappingTable,
    criteria: Vec<(FilterCriterion, BTreeSet<String>)>,
    /// lowercased raw term -> canonical groups, table order
    index: HashMap<String, Vec<String>>,
}

fn key(s: &str) -> String {
    s.trim().to_lowercase()
}

impl TryFrom<RawMappingTable> for MappingTable {
    type Error = DatasetError;

    fn try_from(raw: RawMappingTable) -> Result<Self, Self::Error> {
        let bad = |msg: String| DatasetError::Mapping(format!("{}: {msg}", raw.dataset));
        let canonical: BTreeSet<String> = raw.standardization.iter().map(|s| key(&s.group)).collect();
        let closed = !canonical.is_empty();
        for set in raw.filters.iter().chain(&raw.communities) {
            if set.groups.is_empty() {
                return Err(bad(format!("{} maps no groups", set.name)));
            }
            if closed {
                if let Some(g) = set.groups.iter().find(|g| !canonical.contains(&key(g))) {
                    return Err(bad(format!("{} uses non-canonical group {g:?}", set.name)));
                }
            }
        }
        let mut criteria = Vec::new();
        for set in &raw.filters {
            let c: FilterCriterion = set.name.parse().map_err(|e| bad(format!("{e}")))?;
            if criteria.iter().any(|(seen, _)| seen == &c) {
                return Err(bad(format!("filter {c} listed twice")));
            }
            criteria.push((c, set.groups.iter().map(|g| key(g)).collect()));
        }
        if closed {
            let mapped: BTreeSet<&String> = criteria.iter().flat_map(|(_, g)| g).collect();
            if let Some(g) = canonical.iter().find(|g| !mapped.contains(g)) {
                return Err(bad(format!("group {g:?} has no filter")));
            }
        }

        let mut index: HashMap<String, Vec<String>> = HashMap::new();
        fn add(index: &mut HashMap<String, Vec<String>>, term: &str, group: &str) {
            let groups = index.entry(key(term)).or_default();
            if !groups.iter().any(|g| g == group) {
                groups.push(group.to_string());
            }
        }
        for s in &raw.standardization {
            for t in &s.terms {
                add(&mut index, t, &s.group);
            }
        }
        let fixed_points: Vec<&String> = raw
            .standardization
            .iter()
            .map(|s| &s.group)
            .chain(raw.filters.iter().chain(&raw.communities).flat_map(|s| &s.groups))
            .collect();
        for g in fixed_points {
            if !index.contains_key(&key(g)) {
                add(&mut index, g, g);
            }
        }
        Ok(MappingTable { raw, criteria, index })
    }
}

impl From<MappingTable> for RawMappingTable {
    fn from(t: MappingTable) -> Self {
        t.raw
    }
}

impl MappingTable {
    pub fn from_json(json: &str) -> Result<Self, DatasetError> {
        serde_json::from_str(json).map_err(|e| DatasetError::Mapping(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        Self::from_json(&json)
    }

    /// The shipped table for `kind`; IHC has none.
    pub fn builtin(kind: DatasetKind) -> Option<Self> {
        let json = match kind {
            DatasetKind::DynaHate => include_str!("../../data/mappings/dynahate.json"),
            DatasetKind::Sbic => include_str!("../../data/mappings/sbic.json"),
            DatasetKind::ToxiGen => include_str!("../../data/mappings/toxigen.json"),
            DatasetKind::Ihc => return None,
        };
        Some(Self::from_json(json).expect("shipped mapping table is valid"))
    }

    pub fn dataset(&self) -> &str {
        &self.raw.dataset
    }

    pub fn filters(&self) -> &[GroupSet] {
        &self.raw.filters
    }

    pub fn communities(&self) -> &[GroupSet] {
        &self.raw.communities
    }

    pub fn criteria(&self) -> impl Iterator<Item = &FilterCriterion> {
        self.criteria.iter().map(|(c, _)| c)
    }

    /// Every canonical group `raw` stands for. Some terms appear under more
    /// than one group (e.g. "trans women").
    pub fn groups_for(&self, raw: &str) -> &[String] {
        self.index.get(&key(raw)).map(Vec::as_slice).unwrap_or_default()
    }

    /// First canonical group in table order, or [`Target::Unmapped`].
    pub fn standardize_target(&self, raw: &str) -> Target {
        match self.groups_for(raw).first() {
            Some(g) => Target::Group(g.clone()),
            None => Target::Unmapped(raw.to_string()),
        }
    }

    /// Filters whose subset a message with these targets belongs to.
    pub fn criteria_for<S: AsRef<str>>(&self, targets: &[S]) -> BTreeSet<FilterCriterion> {
        let groups = self.standardized(targets);
        self.criteria
            .iter()
            .filter(|(_, gs)| gs.iter().any(|g| groups.contains(g)))
            .map(|(c, _)| c.clone())
            .collect()
    }

    /// Communities a message with these targets belongs to.
    pub fn communities_for<S: AsRef<str>>(&self, targets: &[S]) -> Vec<String> {
        let groups = self.standardized(targets);
        self.raw
            .communities
            .iter()
            .filter(|c| c.groups.iter().any(|g| groups.contains(&key(g))))
            .map(|c| c.name.clone())
            .collect()
    }

    fn standardized<S: AsRef<str>>(&self, targets: &[S]) -> BTreeSet<String> {
        targets.iter().flat_map(|t| self.groups_for(t.as_ref())).map(|g| key(g)).collect()
    }

    fn group_set(&self, subset: &Subset) -> Result<BTreeSet<String>, DatasetError> {
        match subset {
            Subset::Criterion(c) => self
                .criteria
                .iter()
                .find(|(k, _)| k == c)
                .map(|(_, g)| g.clone())
                .ok_or_else(|| DatasetError::UnknownSubset(c.to_string())),
            Subset::Community(name) => self
                .raw
                .communities
                .iter()
                .find(|c| c.name.eq_ignore_ascii_case(name))
                .map(|c| c.groups.iter().map(|g| key(g)).collect())
                .ok_or_else(|| DatasetError::UnknownSubset(name.clone())),
        }
    }

    /// Hateful (or unlabeled) messages with at least one target that maps
    /// into `subset`. A message may land in several subsets.
    pub fn extract_subset(&self, messages: &[Message], subset: &Subset) -> Result<Vec<Message>, DatasetError> {
        let wanted = self.group_set(subset)?;
        Ok(messages
            .iter()
            .filter(|m| m.label != Some(Label::Benign))
            .filter(|m| self.standardized(&m.targets).iter().any(|g| wanted.contains(g)))
            .cloned()
            .collect())
    }

    /// Sizes of every filter and community subset, in table order.
    pub fn subset_counts(&self, messages: &[Message]) -> Vec<(Subset, usize)> {
        let filters = self.criteria.iter().map(|(c, _)| Subset::Criterion(c.clone()));
        let communities = self.raw.communities.iter().map(|c| Subset::Community(c.name.clone()));
        filters
            .chain(communities)
            .map(|s| {
                let n = self.extract_subset(messages, &s).map(|v| v.len()).unwrap_or(0);
                (s, n)
            })
            .collect()
    }

    pub fn expected(&self, subset: &Subset) -> Option<usize> {
        match subset {
            Subset::Criterion(c) => self.raw.filters.iter().find(|f| f.name.parse().ok().as_ref() == Some(c))?.expected,
            Subset::Community(n) => self.raw.communities.iter().find(|f| &f.name == n)?.expected,
        }
    }
}
