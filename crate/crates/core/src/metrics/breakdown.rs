use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use log::info;
use serde::Serialize;

use super::{Rate, Scored};
use crate::mock::normalize;
use crate::model::{CategoryMap, FilterCriterion, Label, Message, OutcomeKind};
use crate::reconcile::OutcomeRecord;

/// Moderation counts keyed by (subset criterion, firing filter).
pub type FilterTallies = BTreeMap<(FilterCriterion, FilterCriterion), u64>;

/// Count, for one subset's run, how often each filter fired. The firing
/// filter is read off the event category; records without a known category
/// are skipped and their number returned.
pub fn tally_firings(
    subset: &FilterCriterion,
    records: &[OutcomeRecord],
    categories: &CategoryMap,
    tallies: &mut FilterTallies,
) -> usize {
    let mut skipped = 0;
    for r in records {
        let Some(cat) = r.outcome.category() else { continue };
        match categories.criterion_for(cat) {
            Ok(filter) => *tallies.entry((subset.clone(), filter)).or_default() += 1,
            Err(_) => skipped += 1,
        }
    }
    skipped
}

/// Share of each filter's firings that land in its own subset.
pub fn filter_precision(tallies: &FilterTallies) -> BTreeMap<FilterCriterion, Rate> {
    let filters: BTreeSet<&FilterCriterion> = tallies.keys().flat_map(|(s, f)| [s, f]).collect();
    filters
        .into_iter()
        .map(|f| {
            let own = tallies.get(&(f.clone(), f.clone())).copied().unwrap_or(0);
            let all: u64 = tallies.iter().filter(|((_, fired), _)| fired == f).map(|(_, n)| n).sum();
            (f.clone(), Rate::ratio(own as u128, all as u128, "filter never fired"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupRecall {
    pub hate: u64,
    /// Hate records moderated or pre-filtered.
    pub blocked: u64,
    pub prefiltered: u64,
    pub recall: Rate,
    /// Pre-filtered share of the group's hate records.
    pub pf_share: Rate,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StratifiedRecall {
    pub groups: BTreeMap<String, GroupRecall>,
    /// Groups seen only on benign records.
    pub omitted: Vec<String>,
}

/// Recall and pre-filter share per group over hate records. A record counts
/// toward every group `grouping` assigns it.
pub fn stratified_recall<F>(scored: &[Scored<'_>], grouping: F) -> StratifiedRecall
where
    F: Fn(&Message) -> Vec<String>,
{
    let mut tallies: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for s in scored {
        let groups: BTreeSet<String> = grouping(s.message).into_iter().collect();
        for g in groups {
            if s.label != Label::Hate {
                seen.insert(g);
                continue;
            }
            let t = tallies.entry(g).or_default();
            t.0 += 1;
            match s.record.outcome.kind() {
                OutcomeKind::Passed => {}
                OutcomeKind::Moderated => t.1 += 1,
                OutcomeKind::PreFiltered => {
                    t.1 += 1;
                    t.2 += 1;
                }
            }
        }
    }
    let omitted: Vec<String> = seen.into_iter().filter(|g| !tallies.contains_key(g)).collect();
    if !omitted.is_empty() {
        info!("no hate records for {}; omitted from stratified recall", omitted.join(", "));
    }
    let groups = tallies
        .into_iter()
        .map(|(g, (hate, blocked, pre))| {
            let rec = GroupRecall {
                hate,
                blocked,
                prefiltered: pre,
                recall: Rate::ratio(blocked as u128, hate as u128, "no hate records"),
                pf_share: Rate::ratio(pre as u128, hate as u128, "no hate records"),
            };
            (g, rec)
        })
        .collect();
    StratifiedRecall { groups, omitted }
}

/// Token frequencies over pre-filtered texts, most frequent first, ties in
/// lexicographic order.
pub fn prefiltered_unigrams(records: &[OutcomeRecord], stopwords: &HashSet<String>) -> Vec<(String, u64)> {
    let mut freq: HashMap<String, u64> = HashMap::new();
    for r in records.iter().filter(|r| r.outcome.kind() == OutcomeKind::PreFiltered) {
        for tok in normalize(&r.text) {
            if !stopwords.contains(&tok) {
                *freq.entry(tok).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// The shipped English stopword list, already normalized.
pub fn default_stopwords() -> HashSet<String> {
    include_str!("../../data/stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .flat_map(normalize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FilterLevel, ModerationCategory, Outcome};

    fn record(id: &str, text: &str, outcome: Outcome) -> OutcomeRecord {
        OutcomeRecord { run_id: "r".into(), id: id.into(), text: text.into(), outcome, latency: None }
    }

    fn fired(cat: ModerationCategory) -> Outcome {
        Outcome::Moderated { category: cat, fragments: vec![], level: FilterLevel::MAX }
    }

    #[test]
    fn precision_hand_example() {
        let cats = CategoryMap::default();
        let mut t = FilterTallies::new();
        let mis = || fired(ModerationCategory::Misogyny);
        let own: Vec<_> = (0..3).map(|i| record(&format!("a{i}"), "", mis())).collect();
        tally_firings(&FilterCriterion::Misogyny, &own, &cats, &mut t);
        tally_firings(&FilterCriterion::Rer, &[record("b", "", mis())], &cats, &mut t);
        tally_firings(&FilterCriterion::Ssg, &[record("c", "", mis()), record("d", "", Outcome::PreFiltered)], &cats, &mut t);
        let p = filter_precision(&t);
        assert_eq!(p[&FilterCriterion::Misogyny].value(), Some(num_rational::Ratio::new(3, 5)));
        assert!(p[&FilterCriterion::Rer].is_absent());
    }

    #[test]
    fn precision_only_own_subset() {
        let mut t = FilterTallies::new();
        t.insert((FilterCriterion::Rer, FilterCriterion::Rer), 9);
        assert_eq!(filter_precision(&t)[&FilterCriterion::Rer].value(), Some(num_rational::Ratio::from_integer(1)));
    }

    #[test]
    fn stratified_fully_prefiltered() {
        let records = [record("a", "", Outcome::PreFiltered), record("b", "", Outcome::PreFiltered)];
        let corpus = [
            Message::new("a", "").with_label(Label::Hate).with_targets(["g"]),
            Message::new("b", "").with_label(Label::Hate).with_targets(["g"]),
        ];
        let scored = super::super::join(&records, &corpus).unwrap();
        let s = stratified_recall(&scored, |m| m.targets.clone());
        assert_eq!(s.groups.len(), 1);
        assert_eq!(s.groups["g"].recall.to_f64(), Some(1.0));
        assert_eq!(s.groups["g"].pf_share.to_f64(), Some(1.0));
    }

    #[test]
    fn benign_only_groups_are_omitted() {
        let records = [record("a", "", Outcome::Passed)];
        let corpus = [Message::new("a", "").with_label(Label::Benign).with_targets(["g"])];
        let scored = super::super::join(&records, &corpus).unwrap();
        let s = stratified_recall(&scored, |m| m.targets.clone());
        assert!(s.groups.is_empty());
        assert_eq!(s.omitted, ["g"]);
    }

    #[test]
    fn unigram_examples() {
        let stop: HashSet<String> = ["a".to_string()].into();
        let records = [
            record("1", "a b b", Outcome::PreFiltered),
            record("2", "b c", Outcome::PreFiltered),
            record("3", "z z z z", Outcome::Passed),
            record("4", "a a", Outcome::PreFiltered),
        ];
        assert_eq!(prefiltered_unigrams(&records, &stop), [("b".to_string(), 3), ("c".to_string(), 1)]);
        assert!(prefiltered_unigrams(&records[2..3], &stop).is_empty());
    }

    #[test]
    fn stopwords_ship() {
        let s = default_stopwords();
        assert!(s.contains("the") && s.contains("and"));
    }
}
