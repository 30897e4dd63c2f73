//! Domain model of a black-box moderation system: filter criteria, levels,
//! channel filter configuration, moderation categories, messages and the
//! per-message outcome partition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("filter level {0} out of range 0..=4")]
    LevelOutOfRange(i64),
    #[error("active criterion {0} has no configured level")]
    MissingLevel(FilterCriterion),
    #[error("no decision supplied for active criterion {0}")]
    MissingDecision(FilterCriterion),
    #[error("moderation category {0} has no registered criterion")]
    UnmappedCategory(ModerationCategory),
    #[error("criterion {criterion} is already the image of category {existing}")]
    NonInjective {
        criterion: FilterCriterion,
        existing: ModerationCategory,
    },
    #[error("empty {0} name")]
    EmptyName(&'static str),
}

/// An abstract harm criterion that one channel filter enforces.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FilterCriterion {
    Disability,
    /// Sex, sexuality and gender.
    Ssg,
    Misogyny,
    /// Race, ethnicity and religion.
    Rer,
    Custom(String),
}

impl FilterCriterion {
    pub const BUILTIN: [FilterCriterion; 4] = [
        FilterCriterion::Disability,
        FilterCriterion::Ssg,
        FilterCriterion::Misogyny,
        FilterCriterion::Rer,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            FilterCriterion::Disability => "Disability",
            FilterCriterion::Ssg => "SSG",
            FilterCriterion::Misogyny => "Misogyny",
            FilterCriterion::Rer => "RER",
            FilterCriterion::Custom(name) => name,
        }
    }

    pub fn is_builtin(&self) -> bool {
        !matches!(self, FilterCriterion::Custom(_))
    }
}

impl fmt::Display for FilterCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterCriterion {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err(ModelError::EmptyName("criterion"));
        }
        Ok(match trimmed.to_ascii_lowercase().as_str() {
            "disability" => FilterCriterion::Disability,
            "ssg" => FilterCriterion::Ssg,
            "misogyny" => FilterCriterion::Misogyny,
            "rer" => FilterCriterion::Rer,
            _ => FilterCriterion::Custom(trimmed.to_string()),
        })
    }
}

impl From<FilterCriterion> for String {
    fn from(c: FilterCriterion) -> Self {
        c.as_str().to_string()
    }
}

impl TryFrom<String> for FilterCriterion {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Filter strictness, 0 (no filtering) through 4 (maximum filtering).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "i64")]
pub struct FilterLevel(u8);

impl FilterLevel {
    pub const OFF: FilterLevel = FilterLevel(0);
    pub const MAX: FilterLevel = FilterLevel(4);

    pub fn new(level: i64) -> Result<Self, ModelError> {
        if (0..=4).contains(&level) {
            Ok(FilterLevel(level as u8))
        } else {
            Err(ModelError::LevelOutOfRange(level))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = FilterLevel> {
        (0..=4).map(FilterLevel)
    }
}

impl fmt::Display for FilterLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<FilterLevel> for u8 {
    fn from(l: FilterLevel) -> Self {
        l.0
    }
}

impl TryFrom<i64> for FilterLevel {
    type Error = ModelError;

    fn try_from(v: i64) -> Result<Self, Self::Error> {
        FilterLevel::new(v)
    }
}

/// The channel operator's choice of active filters and their levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFilterConfig")]
pub struct FilterConfig {
    active: BTreeSet<FilterCriterion>,
    levels: BTreeMap<FilterCriterion, FilterLevel>,
}

#[derive(Deserialize)]
struct RawFilterConfig {
    #[serde(default)]
    active: BTreeSet<FilterCriterion>,
    #[serde(default)]
    levels: BTreeMap<FilterCriterion, FilterLevel>,
}

impl TryFrom<RawFilterConfig> for FilterConfig {
    type Error = ModelError;

    fn try_from(raw: RawFilterConfig) -> Result<Self, Self::Error> {
        FilterConfig::new(raw.active, raw.levels)
    }
}

impl FilterConfig {
    pub fn new(
        active: impl IntoIterator<Item = FilterCriterion>,
        levels: impl IntoIterator<Item = (FilterCriterion, FilterLevel)>,
    ) -> Result<Self, ModelError> {
        let active: BTreeSet<_> = active.into_iter().collect();
        let levels: BTreeMap<_, _> = levels.into_iter().collect();
        if let Some(missing) = active.iter().find(|c| !levels.contains_key(*c)) {
            return Err(ModelError::MissingLevel(missing.clone()));
        }
        Ok(FilterConfig { active, levels })
    }

    /// Every active criterion at the same level.
    pub fn uniform(active: impl IntoIterator<Item = FilterCriterion>, level: FilterLevel) -> Self {
        let active: BTreeSet<_> = active.into_iter().collect();
        let levels = active.iter().map(|c| (c.clone(), level)).collect();
        FilterConfig { active, levels }
    }

    /// All four built-in criteria active at `level`.
    pub fn all_builtin(level: FilterLevel) -> Self {
        Self::uniform(FilterCriterion::BUILTIN, level)
    }

    /// Nothing channel-filtered.
    pub fn none() -> Self {
        FilterConfig {
            active: BTreeSet::new(),
            levels: BTreeMap::new(),
        }
    }

    pub fn active(&self) -> &BTreeSet<FilterCriterion> {
        &self.active
    }

    pub fn levels(&self) -> &BTreeMap<FilterCriterion, FilterLevel> {
        &self.levels
    }

    pub fn is_active(&self, c: &FilterCriterion) -> bool {
        self.active.contains(c)
    }

    /// The effective level of `c`: its configured level when active, otherwise off.
    pub fn effective_level(&self, c: &FilterCriterion) -> FilterLevel {
        if self.is_active(c) {
            self.levels[c]
        } else {
            FilterLevel::OFF
        }
    }

    /// Same active set with every level replaced by `level`.
    pub fn with_level(&self, level: FilterLevel) -> Self {
        Self::uniform(self.active.iter().cloned(), level)
    }
}

/// Category label the moderation system attaches to its events.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModerationCategory {
    Ableism,
    Misogyny,
    Racism,
    Homophobia,
    Custom(String),
}

impl ModerationCategory {
    pub const BUILTIN: [ModerationCategory; 4] = [
        ModerationCategory::Ableism,
        ModerationCategory::Misogyny,
        ModerationCategory::Racism,
        ModerationCategory::Homophobia,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            ModerationCategory::Ableism => "ableism",
            ModerationCategory::Misogyny => "misogyny",
            ModerationCategory::Racism => "racism",
            ModerationCategory::Homophobia => "homophobia",
            ModerationCategory::Custom(name) => name,
        }
    }
}

impl fmt::Display for ModerationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModerationCategory {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err(ModelError::EmptyName("category"));
        }
        Ok(match trimmed.to_ascii_lowercase().as_str() {
            "ableism" => ModerationCategory::Ableism,
            "misogyny" => ModerationCategory::Misogyny,
            "racism" => ModerationCategory::Racism,
            "homophobia" => ModerationCategory::Homophobia,
            _ => ModerationCategory::Custom(trimmed.to_string()),
        })
    }
}

impl From<ModerationCategory> for String {
    fn from(c: ModerationCategory) -> Self {
        c.as_str().to_string()
    }
}

impl TryFrom<String> for ModerationCategory {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Mapping for the built-in categories. Custom categories need a [`CategoryMap`].
pub fn category_to_criterion(cat: &ModerationCategory) -> Result<FilterCriterion, ModelError> {
    match cat {
        ModerationCategory::Ableism => Ok(FilterCriterion::Disability),
        ModerationCategory::Misogyny => Ok(FilterCriterion::Misogyny),
        ModerationCategory::Racism => Ok(FilterCriterion::Rer),
        ModerationCategory::Homophobia => Ok(FilterCriterion::Ssg),
        ModerationCategory::Custom(_) => Err(ModelError::UnmappedCategory(cat.clone())),
    }
}

/// Category → criterion map: the built-in pairs plus registered extensions.
/// Registration keeps the map injective.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    custom: BTreeMap<ModerationCategory, FilterCriterion>,
}

impl CategoryMap {
    pub fn register(
        &mut self,
        category: ModerationCategory,
        criterion: FilterCriterion,
    ) -> Result<(), ModelError> {
        let builtin_hit = ModerationCategory::BUILTIN
            .iter()
            .find(|b| category_to_criterion(b).ok().as_ref() == Some(&criterion));
        let custom_hit = self
            .custom
            .iter()
            .find(|(cat, crit)| **crit == criterion && **cat != category)
            .map(|(cat, _)| cat);
        if let Some(existing) = builtin_hit.or(custom_hit) {
            if *existing != category {
                return Err(ModelError::NonInjective {
                    criterion,
                    existing: existing.clone(),
                });
            }
        }
        self.custom.insert(category, criterion);
        Ok(())
    }

    pub fn criterion_for(&self, cat: &ModerationCategory) -> Result<FilterCriterion, ModelError> {
        match cat {
            ModerationCategory::Custom(_) => self
                .custom
                .get(cat)
                .cloned()
                .ok_or_else(|| ModelError::UnmappedCategory(cat.clone())),
            builtin => category_to_criterion(builtin),
        }
    }
}

/// The active moderation function: true iff any active filter fired.
pub fn active_decision(
    per_criterion: &BTreeMap<FilterCriterion, bool>,
    config: &FilterConfig,
) -> Result<bool, ModelError> {
    let mut fired = false;
    for c in config.active() {
        match per_criterion.get(c) {
            Some(v) => fired |= *v,
            None => return Err(ModelError::MissingDecision(c.clone())),
        }
    }
    Ok(fired)
}

/// Harness-generated message identifier, carried out of band.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageId(pub String);

impl MessageId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MessageId {
    fn from(s: &str) -> Self {
        MessageId(s.to_string())
    }
}

impl From<String> for MessageId {
    fn from(s: String) -> Self {
        MessageId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Hate,
    Benign,
}

impl Label {
    pub fn is_hate(self) -> bool {
        self == Label::Hate
    }
}

/// A labeled text sample from a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<String>,
    #[serde(default)]
    pub source: String,
}

impl Message {
    pub fn new(id: impl Into<MessageId>, text: impl Into<String>) -> Self {
        Message {
            id: id.into(),
            text: text.into(),
            label: None,
            targets: Vec::new(),
            source: String::new(),
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_targets<I, S>(mut self, targets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for t in targets {
            let t = t.into();
            if !self.targets.contains(&t) {
                self.targets.push(t);
            }
        }
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }
}

/// A flagged span of the message and the category it was flagged under.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fragment {
    pub text: String,
    pub category: ModerationCategory,
}

/// What happened to one sent message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Passed,
    Moderated {
        category: ModerationCategory,
        fragments: Vec<Fragment>,
        level: FilterLevel,
    },
    PreFiltered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Passed,
    Moderated,
    PreFiltered,
}

impl Outcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            Outcome::Passed => OutcomeKind::Passed,
            Outcome::Moderated { .. } => OutcomeKind::Moderated,
            Outcome::PreFiltered => OutcomeKind::PreFiltered,
        }
    }

    /// Moderated or pre-filtered: the message did not reach the chat.
    pub fn is_blocked(&self) -> bool {
        !matches!(self, Outcome::Passed)
    }

    pub fn category(&self) -> Option<&ModerationCategory> {
        match self {
            Outcome::Moderated { category, .. } => Some(category),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn decisions(pairs: &[(FilterCriterion, bool)]) -> BTreeMap<FilterCriterion, bool> {
        pairs.iter().cloned().collect()
    }

    #[test]
    fn union_semantics() {
        let cfg = FilterConfig::uniform([FilterCriterion::Misogyny, FilterCriterion::Rer], FilterLevel::MAX);
        let d = decisions(&[(FilterCriterion::Misogyny, true), (FilterCriterion::Rer, false)]);
        assert!(active_decision(&d, &cfg).unwrap());
    }

    #[test]
    fn empty_active_set_never_fires() {
        let d = decisions(&[(FilterCriterion::Misogyny, true)]);
        assert!(!active_decision(&d, &FilterConfig::none()).unwrap());
    }

    #[test]
    fn all_zero_decisions() {
        let d = decisions(&FilterCriterion::BUILTIN.map(|c| (c, false)));
        assert!(!active_decision(&d, &FilterConfig::all_builtin(FilterLevel::MAX)).unwrap());
    }

    #[test]
    fn missing_active_entry_is_an_error() {
        let cfg = FilterConfig::uniform([FilterCriterion::Rer], FilterLevel::MAX);
        let err = active_decision(&BTreeMap::new(), &cfg).unwrap_err();
        assert_eq!(err, ModelError::MissingDecision(FilterCriterion::Rer));
    }

    #[test]
    fn builtin_category_mapping() {
        use FilterCriterion as F;
        use ModerationCategory as M;
        assert_eq!(category_to_criterion(&M::Ableism).unwrap(), F::Disability);
        assert_eq!(category_to_criterion(&M::Racism).unwrap(), F::Rer);
        assert_eq!(category_to_criterion(&M::Homophobia).unwrap(), F::Ssg);
        assert_eq!(category_to_criterion(&M::Misogyny).unwrap(), F::Misogyny);
        let images: BTreeSet<_> = M::BUILTIN.iter().map(|c| category_to_criterion(c).unwrap()).collect();
        assert_eq!(images.len(), 4);
    }

    #[test]
    fn custom_category_needs_registration() {
        let cat = ModerationCategory::Custom("ageism".into());
        assert!(matches!(category_to_criterion(&cat), Err(ModelError::UnmappedCategory(_))));
        let mut map = CategoryMap::default();
        assert!(map.criterion_for(&cat).is_err());
        map.register(cat.clone(), FilterCriterion::Custom("Age".into())).unwrap();
        assert_eq!(map.criterion_for(&cat).unwrap(), FilterCriterion::Custom("Age".into()));
        assert_eq!(map.criterion_for(&ModerationCategory::Racism).unwrap(), FilterCriterion::Rer);
    }

    #[test]
    fn category_map_rejects_non_injective_registration() {
        let mut map = CategoryMap::default();
        let err = map
            .register(ModerationCategory::Custom("xenophobia".into()), FilterCriterion::Rer)
            .unwrap_err();
        assert!(matches!(err, ModelError::NonInjective { .. }));
        map.register(ModerationCategory::Custom("a".into()), FilterCriterion::Custom("X".into()))
            .unwrap();
        assert!(map
            .register(ModerationCategory::Custom("b".into()), FilterCriterion::Custom("X".into()))
            .is_err());
    }

    #[test]
    fn level_bounds() {
        assert!(FilterLevel::new(0).is_ok());
        assert!(FilterLevel::new(4).is_ok());
        assert_eq!(FilterLevel::new(5), Err(ModelError::LevelOutOfRange(5)));
        assert_eq!(FilterLevel::new(-1), Err(ModelError::LevelOutOfRange(-1)));
        assert!(serde_json::from_str::<FilterLevel>("7").is_err());
    }

    #[test]
    fn filter_config_requires_levels_for_active() {
        let err = FilterConfig::new([FilterCriterion::Ssg], []).unwrap_err();
        assert_eq!(err, ModelError::MissingLevel(FilterCriterion::Ssg));
        let parsed: Result<FilterConfig, _> =
            serde_json::from_str(r#"{"active":["SSG"],"levels":{}}"#);
        assert!(parsed.is_err());
        let parsed: FilterConfig =
            serde_json::from_str(r#"{"active":["ssg","RER"],"levels":{"SSG":2,"RER":4}}"#).unwrap();
        assert_eq!(parsed.effective_level(&FilterCriterion::Ssg).get(), 2);
        assert_eq!(parsed.effective_level(&FilterCriterion::Disability), FilterLevel::OFF);
    }

    #[test]
    fn outcome_wire_shape() {
        let o = Outcome::Moderated {
            category: ModerationCategory::Misogyny,
            fragments: vec![Fragment { text: "x".into(), category: ModerationCategory::Misogyny }],
            level: FilterLevel::new(2).unwrap(),
        };
        let json = serde_json::to_value(&o).unwrap();
        assert_eq!(json["kind"], "moderated");
        assert_eq!(json["category"], "misogyny");
        assert_eq!(serde_json::to_value(Outcome::PreFiltered).unwrap()["kind"], "pre_filtered");
    }

    fn criterion() -> impl Strategy<Value = FilterCriterion> {
        prop::sample::select(FilterCriterion::BUILTIN.to_vec())
    }

    proptest! {
        #[test]
        fn enlarging_active_set_is_monotone(
            fired in prop::collection::btree_map(criterion(), any::<bool>(), 4),
            small in prop::collection::btree_set(criterion(), 0..4),
            extra in prop::collection::btree_set(criterion(), 0..4),
        ) {
            let fired: BTreeMap<_, _> = FilterCriterion::BUILTIN
                .iter()
                .map(|c| (c.clone(), *fired.get(c).unwrap_or(&false)))
                .collect();
            let a = FilterConfig::uniform(small.clone(), FilterLevel::MAX);
            let b = FilterConfig::uniform(small.union(&extra).cloned(), FilterLevel::MAX);
            if active_decision(&fired, &a).unwrap() {
                prop_assert!(active_decision(&fired, &b).unwrap());
            }
        }
    }
}
