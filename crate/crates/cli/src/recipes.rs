//! Named experiments, each a short sequence of stages over the harness.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use log::{info, warn};
use modaudit_core::datasets::Subset;
use modaudit_core::metrics::{
    confusion_of, default_stopwords, filter_precision, join, prefiltered_unigrams, rates_for, stratified_recall,
    tally_firings, write_plot_data, write_reports_csv, write_stratified_csv, ConfusionCounts, FilterTallies,
    MetricsReport, Rate, DEFAULT_DECIMALS,
};
use modaudit_core::mock::normalize;
use modaudit_core::probes::{counterfactual, load_probe_set, perturbation_suite, SlurMap, Variant};
use modaudit_core::{
    CategoryMap, FilterConfig, FilterCriterion, FilterLevel, Label, Message, MessageId, Outcome, OutcomeKind,
    OutcomeRecord,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;

use crate::corpus::LoadedCorpus;
use crate::error::{CliError, Result};
use crate::harness::Harness;

pub const RECIPES: [&str; 9] = [
    "table1",
    "filterwise",
    "community",
    "level-sweep",
    "counterfactual",
    "perturbation",
    "policy-probes",
    "prefilter-unigrams",
    "order-invariance",
];

/// Report files written by a recipe, plus a short text summary.
#[derive(Debug, Default)]
pub struct RecipeOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub fn run_recipe(name: &str, h: &mut Harness, corpora: &[LoadedCorpus]) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::default();
    match name {
        "table1" => table1(h, corpora, &mut out)?,
        "filterwise" => filterwise(h, corpora, &mut out)?,
        "community" => community(h, corpora, &mut out)?,
        "level-sweep" => level_sweep(h, corpora, &mut out)?,
        "counterfactual" => counterfactual_probes(h, corpora, &mut out)?,
        "perturbation" => perturbation(h, &mut out)?,
        "policy-probes" => policy_probes(h, &mut out)?,
        "prefilter-unigrams" => unigrams(h, corpora, &mut out)?,
        "order-invariance" => order_invariance(h, corpora, &mut out)?,
        other => return Err(CliError::Config(format!("unknown recipe {other:?} (known: {})", RECIPES.join(", ")))),
    }
    Ok(out)
}

fn need_corpora(corpora: &[LoadedCorpus], recipe: &str) -> Result<()> {
    if corpora.is_empty() {
        return Err(CliError::Config(format!("recipe {recipe} needs at least one corpus")));
    }
    Ok(())
}

fn scoring(e: impl std::fmt::Display) -> CliError {
    CliError::Scoring(e.to_string())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Io(format!("csv: {e}")))?;
    Ok(buf)
}

fn rows_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn emit_json<T: Serialize + ?Sized>(h: &Harness, name: &str, value: &T, out: &mut RecipeOutput) -> Result<()> {
    let json = serde_json::to_vec_pretty(value).expect("report serializes");
    out.files.push(h.dir.write_report(name, &json)?);
    Ok(())
}

fn emit_reports(h: &Harness, stem: &str, reports: &[MetricsReport], out: &mut RecipeOutput) -> Result<()> {
    let csv = csv_bytes(|buf| write_reports_csv(buf, reports, DEFAULT_DECIMALS))?;
    out.files.push(h.dir.write_report(&format!("{stem}.csv"), &csv)?);
    emit_json(h, &format!("{stem}.json"), reports, out)
}

fn emit_rows<T: Serialize>(h: &Harness, stem: &str, rows: &[T], out: &mut RecipeOutput) -> Result<()> {
    out.files.push(h.dir.write_report(&format!("{stem}.csv"), &rows_csv(rows)?)?);
    emit_json(h, &format!("{stem}.json"), rows, out)
}

fn fmt_rate(r: &Rate) -> String {
    match r {
        Rate::Value(_) => r.format(DEFAULT_DECIMALS),
        Rate::Absent(_) => "n/a".into(),
    }
}

/// Every criterion known to the config plus the built-in four, at the
/// configured level (maximum when unset).
pub fn all_filters(cfg: &FilterConfig) -> FilterConfig {
    let mut criteria: Vec<FilterCriterion> = FilterCriterion::BUILTIN.to_vec();
    criteria.extend(cfg.levels().keys().filter(|c| !c.is_builtin()).cloned());
    let levels: Vec<_> =
        criteria.iter().map(|c| (c.clone(), cfg.levels().get(c).copied().unwrap_or(FilterLevel::MAX))).collect();
    FilterConfig::new(criteria, levels).expect("every criterion has a level")
}

fn sweep_filters(cfg: &FilterConfig, level: FilterLevel) -> FilterConfig {
    all_filters(cfg).with_level(level)
}

fn blocked(records: &[OutcomeRecord]) -> usize {
    records.iter().filter(|r| r.outcome.is_blocked()).count()
}

fn table1(h: &mut Harness, corpora: &[LoadedCorpus], out: &mut RecipeOutput) -> Result<()> {
    need_corpora(corpora, "table1")?;
    let filters = h.cfg.filters.clone();
    let mut reports = Vec::new();
    let mut pooled = ConfusionCounts::default();
    for c in corpora {
        let records = h.run_stage(&format!("corpus-{}", c.name), &filters, &c.messages)?;
        let counts = confusion_of(&records, &c.messages).map_err(scoring)?;
        pooled += counts;
        reports.push(rates_for(&c.name, &counts));
    }
    reports.push(rates_for("overall (pooled)", &pooled));
    for r in &reports {
        let _ = writeln!(
            out.summary,
            "{:<20} P={} R={} TNR={} F1(P,R)={} F1(TPR,TNR)={} Pf={}",
            r.group,
            fmt_rate(&r.precision),
            fmt_rate(&r.recall),
            fmt_rate(&r.tnr),
            fmt_rate(&r.f1_pr),
            fmt_rate(&r.f1_tpr_tnr),
            fmt_rate(&r.prefilter_rate)
        );
    }
    emit_reports(h, "table1", &reports, out)
}

#[derive(Debug, Serialize)]
struct FilterRow {
    dataset: String,
    filter: String,
    subset_size: usize,
    expected_size: Option<usize>,
    blocked: u64,
    prefiltered: u64,
    recall: String,
    pf: String,
}

#[derive(Debug, Serialize)]
struct PrecisionRow {
    dataset: String,
    filter: String,
    own_subset: u64,
    all_firings: u64,
    precision: String,
}

fn filterwise(h: &mut Harness, corpora: &[LoadedCorpus], out: &mut RecipeOutput) -> Result<()> {
    need_corpora(corpora, "filterwise")?;
    let mut rows = Vec::new();
    let mut precision_rows = Vec::new();
    let wide = all_filters(&h.cfg.filters);
    let categories = CategoryMap::default();
    for c in corpora {
        let Some(mapping) = &c.mapping else {
            warn!("filterwise: corpus {} has no mapping table, skipped", c.name);
            continue;
        };
        let mut tallies = FilterTallies::new();
        for crit in mapping.criteria().cloned().collect::<Vec<_>>() {
            let subset = mapping.extract_subset(&c.subset_pool, &Subset::Criterion(crit.clone())).map_err(scoring)?;
            let level = h.cfg.filters.levels().get(&crit).copied().unwrap_or(FilterLevel::MAX);
            let only = FilterConfig::uniform([crit.clone()], level);
            let records = h.run_stage(&format!("filter-{}-{crit}", c.name), &only, &subset)?;
            let counts = confusion_of(&records, &subset).map_err(scoring)?;
            let r = rates_for(&crit.to_string(), &counts);
            rows.push(FilterRow {
                dataset: c.name.clone(),
                filter: crit.to_string(),
                subset_size: subset.len(),
                expected_size: mapping.expected(&Subset::Criterion(crit.clone())),
                blocked: counts.tp,
                prefiltered: counts.prefiltered_hate,
                recall: r.recall.format(DEFAULT_DECIMALS),
                pf: r.prefilter_rate.format(DEFAULT_DECIMALS),
            });
            let records = h.run_stage(&format!("precision-{}-{crit}", c.name), &wide, &subset)?;
            let skipped = tally_firings(&crit, &records, &categories, &mut tallies);
            if skipped > 0 {
                warn!("filterwise: {skipped} event(s) with unmapped categories on {}/{crit}", c.name);
            }
        }
        for (filter, rate) in filter_precision(&tallies) {
            let own = tallies.get(&(filter.clone(), filter.clone())).copied().unwrap_or(0);
            let all: u64 = tallies.iter().filter(|((_, f), _)| *f == filter).map(|(_, n)| n).sum();
            precision_rows.push(PrecisionRow {
                dataset: c.name.clone(),
                filter: filter.to_string(),
                own_subset: own,
                all_firings: all,
                precision: rate.format(DEFAULT_DECIMALS),
            });
        }
    }
    if rows.is_empty() {
        return Err(CliError::Config("filterwise: no corpus has a mapping table".into()));
    }
    for r in &rows {
        let _ = writeln!(out.summary, "{:<12} {:<10} n={:<6} R={:<6} Pf={}", r.dataset, r.filter, r.subset_size, r.recall, r.pf);
    }
    emit_rows(h, "filterwise", &rows, out)?;
    emit_rows(h, "filter_precision", &precision_rows, out)
}

fn community(h: &mut Harness, corpora: &[LoadedCorpus], out: &mut RecipeOutput) -> Result<()> {
    need_corpora(corpora, "community")?;
    let wide = all_filters(&h.cfg.filters);
    let mut any = false;
    for c in corpora {
        let Some(mapping) = c.mapping.as_ref().filter(|m| !m.communities().is_empty()) else {
            warn!("community: corpus {} has no community table, skipped", c.name);
            continue;
        };
        any = true;
        let pool: Vec<Message> = c
            .subset_pool
            .iter()
            .filter(|m| m.label != Some(Label::Benign) && !mapping.communities_for(&m.targets).is_empty())
            .cloned()
            .collect();
        let records = h.run_stage(&format!("community-{}", c.name), &wide, &pool)?;
        let scored = join(&records, &pool).map_err(scoring)?;
        let strat = stratified_recall(&scored, |m| mapping.communities_for(&m.targets));
        for (g, r) in &strat.groups {
            let _ = writeln!(out.summary, "{:<12} {:<28} n={:<6} R={:<6} Pf={}", c.name, g, r.hate, fmt_rate(&r.recall), fmt_rate(&r.pf_share));
        }
        let csv = csv_bytes(|buf| write_stratified_csv(buf, &strat, DEFAULT_DECIMALS))?;
        out.files.push(h.dir.write_report(&format!("community-{}.csv", c.name), &csv)?);
        let plot = csv_bytes(|buf| write_plot_data(buf, &strat))?;
        out.files.push(h.dir.write_report(&format!("community-{}-plot.csv", c.name), &plot)?);
        emit_json(h, &format!("community-{}.json", c.name), &strat, out)?;
    }
    if !any {
        return Err(CliError::Config("community: no corpus has a community table".into()));
    }
    Ok(())
}

fn level_sweep(h: &mut Harness, corpora: &[LoadedCorpus], out: &mut RecipeOutput) -> Result<()> {
    need_corpora(corpora, "level-sweep")?;
    let mut reports = Vec::new();
    let mut last_recall: Option<Rate> = None;
    for level in FilterLevel::all() {
        let filters = sweep_filters(&h.cfg.filters, level);
        let mut pooled = ConfusionCounts::default();
        for c in corpora {
            let records = h.run_stage(&format!("level{level}-{}", c.name), &filters, &c.messages)?;
            let counts = confusion_of(&records, &c.messages).map_err(scoring)?;
            pooled += counts;
            if corpora.len() > 1 {
                reports.push(rates_for(&format!("level {level} {}", c.name), &counts));
            }
        }
        let r = rates_for(&format!("level {level}"), &pooled);
        if let (Some(Rate::Value(prev)), Rate::Value(now)) = (last_recall.as_ref(), &r.recall) {
            if now < prev {
                warn!("level-sweep: recall fell from level {} to {level}", level.get() - 1);
            }
        }
        let _ = writeln!(
            out.summary,
            "level {level}: R={} moderated={} prefiltered={}",
            fmt_rate(&r.recall),
            r.counts.tp - r.counts.prefiltered_hate,
            r.counts.prefiltered_hate
        );
        last_recall = Some(r.recall.clone());
        reports.push(r);
    }
    emit_reports(h, "level_sweep", &reports, out)
}

#[derive(Debug, Serialize)]
struct CounterfactualRow {
    dataset: String,
    hate: usize,
    false_negatives: usize,
    probes: usize,
    flipped: usize,
    flip_rate: String,
}

fn counterfactual_probes(h: &mut Harness, corpora: &[LoadedCorpus], out: &mut RecipeOutput) -> Result<()> {
    need_corpora(corpora, "counterfactual")?;
    let path = h.cfg.probes.slur_map.clone().ok_or_else(|| CliError::Config("counterfactual needs probes.slur_map".into()))?;
    let map = SlurMap::load(&path).map_err(|e| CliError::Config(e.to_string()))?;
    let filters = h.cfg.filters.clone();
    let mut rows = Vec::new();
    for c in corpora {
        let hate: Vec<Message> = c.messages.iter().filter(|m| m.label == Some(Label::Hate)).cloned().collect();
        let records = h.run_stage(&format!("corpus-{}", c.name), &filters, &hate)?;
        let by_id: HashMap<&MessageId, &Message> = hate.iter().map(|m| (&m.id, m)).collect();
        let misses: Vec<&Message> =
            records.iter().filter(|r| r.outcome.kind() == OutcomeKind::Passed).map(|r| by_id[&r.id]).collect();
        let probes: Vec<Message> = misses
            .iter()
            .filter_map(|m| {
                let text = counterfactual(&m.text, &map);
                (text != m.text).then(|| Message {
                    id: MessageId(format!("{}~cf", m.id)),
                    text,
                    ..(*m).clone()
                })
            })
            .collect();
        let swapped = h.run_stage(&format!("counterfactual-{}", c.name), &filters, &probes)?;
        let flipped = blocked(&swapped);
        let rate = Rate::ratio(flipped as u128, swapped.len() as u128, "no counterfactual probes");
        let _ = writeln!(
            out.summary,
            "{:<12} false negatives={} probes={} flipped={} rate={}",
            c.name,
            misses.len(),
            probes.len(),
            flipped,
            fmt_rate(&rate)
        );
        let mut jsonl = Vec::new();
        modaudit_core::datasets::write_corpus(&mut jsonl, &probes).map_err(|e| CliError::Io(e.to_string()))?;
        out.files.push(h.dir.write_report(&format!("counterfactual-{}.jsonl", c.name), &jsonl)?);
        rows.push(CounterfactualRow {
            dataset: c.name.clone(),
            hate: hate.len(),
            false_negatives: misses.len(),
            probes: probes.len(),
            flipped,
            flip_rate: rate.format(DEFAULT_DECIMALS),
        });
    }
    emit_rows(h, "counterfactual", &rows, out)
}

#[derive(Debug, Serialize)]
struct PerturbationRow {
    method: &'static str,
    example: String,
    probes: usize,
    moderated: usize,
    moderation_rate: String,
}

fn variant_slug(v: Variant) -> String {
    serde_json::to_value(v).ok().and_then(|s| s.as_str().map(String::from)).expect("unit variant")
}

/// Fragments file: one per line, blank lines and `#` comments skipped.
pub fn read_fragments(path: &std::path::Path) -> Result<Vec<String>> {
    let raw = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(raw.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect())
}

fn perturbation(h: &mut Harness, out: &mut RecipeOutput) -> Result<()> {
    let probes = h.cfg.probes.clone();
    if !probes.perturbation {
        return Err(CliError::Config("perturbation probes are disabled in the config".into()));
    }
    let path = probes.fragments.ok_or_else(|| CliError::Config("perturbation needs probes.fragments".into()))?;
    let fragments = read_fragments(&path)?;
    if fragments.is_empty() {
        return Err(CliError::Config(format!("{}: no fragments", path.display())));
    }
    let mut messages = Vec::new();
    let mut variant_of = HashMap::new();
    let mut example = BTreeMap::new();
    for (i, frag) in fragments.iter().enumerate() {
        let suite = perturbation_suite(frag).map_err(|e| CliError::Config(e.to_string()))?;
        for (v, text) in suite {
            let id = MessageId(format!("perturb-{i:04}-{}", variant_slug(v)));
            example.entry(v).or_insert_with(|| text.clone());
            variant_of.insert(id.clone(), v);
            let body = probes.template.replace("{fragment}", &text);
            messages.push(Message::new(id, body).with_label(Label::Hate).with_source("perturbation"));
        }
    }
    let records = h.run_stage("perturbation", &h.cfg.filters.clone(), &messages)?;
    let mut tally: BTreeMap<Variant, (usize, usize)> = BTreeMap::new();
    for r in &records {
        let t = tally.entry(variant_of[&r.id]).or_default();
        t.0 += 1;
        t.1 += r.outcome.is_blocked() as usize;
    }
    let rows: Vec<PerturbationRow> = Variant::ALL
        .into_iter()
        .map(|v| {
            let (n, hit) = tally.get(&v).copied().unwrap_or_default();
            PerturbationRow {
                method: v.label(),
                example: example[&v].clone(),
                probes: n,
                moderated: hit,
                moderation_rate: Rate::ratio(hit as u128, n as u128, "no probes").format(DEFAULT_DECIMALS),
            }
        })
        .collect();
    for r in &rows {
        let _ = writeln!(out.summary, "{:<24} {:<14} {}/{} = {}", r.method, r.example, r.moderated, r.probes, r.moderation_rate);
    }
    emit_rows(h, "perturbation", &rows, out)
}

#[derive(Debug, Serialize)]
struct PolicyRow {
    level: u8,
    probe_set: String,
    probes: usize,
    flagged: usize,
    flag_rate: String,
    expected_moderate: usize,
    mismatches: usize,
}

fn policy_probes(h: &mut Harness, out: &mut RecipeOutput) -> Result<()> {
    let sets = h.cfg.probes.probe_sets.clone();
    if sets.is_empty() {
        return Err(CliError::Config("policy-probes needs probes.probe_sets".into()));
    }
    let mut messages = Vec::new();
    for path in &sets {
        let prefix = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "probes".into());
        messages.extend(load_probe_set(path, &prefix).map_err(|e| CliError::Config(e.to_string()))?);
    }
    let mut ids = HashSet::new();
    if let Some(dup) = messages.iter().find(|m| !ids.insert(&m.id)) {
        return Err(CliError::Config(format!("duplicate probe id {}", dup.id)));
    }
    let mut rows = Vec::new();
    for level in [2u8, 4] {
        let level = FilterLevel::new(level as i64).expect("valid level");
        let filters = sweep_filters(&h.cfg.filters, level);
        let records = h.run_stage(&format!("policy-level{level}"), &filters, &messages)?;
        let by_id: HashMap<&MessageId, &Message> = messages.iter().map(|m| (&m.id, m)).collect();
        let mut per_set: BTreeMap<&str, (usize, usize, usize, usize)> = BTreeMap::new();
        for r in &records {
            let m = by_id[&r.id];
            let t = per_set.entry(m.source.as_str()).or_default();
            let want = m.label == Some(Label::Hate);
            t.0 += 1;
            t.1 += r.outcome.is_blocked() as usize;
            t.2 += want as usize;
            t.3 += (want != r.outcome.is_blocked()) as usize;
        }
        for (set, (n, flagged, want, bad)) in per_set {
            let rate = Rate::ratio(flagged as u128, n as u128, "no probes");
            let _ = writeln!(out.summary, "level {level} {set:<20} flagged {flagged}/{n} = {}", fmt_rate(&rate));
            rows.push(PolicyRow {
                level: level.get(),
                probe_set: set.to_string(),
                probes: n,
                flagged,
                flag_rate: rate.format(DEFAULT_DECIMALS),
                expected_moderate: want,
                mismatches: bad,
            });
        }
    }
    emit_rows(h, "policy_probes", &rows, out)
}

#[derive(Debug, Serialize)]
struct UnigramRow {
    rank: usize,
    token: String,
    frequency: u64,
}

fn unigrams(h: &mut Harness, corpora: &[LoadedCorpus], out: &mut RecipeOutput) -> Result<()> {
    need_corpora(corpora, "prefilter-unigrams")?;
    let stopwords: HashSet<String> = match &h.cfg.stopwords {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(normalize)
            .collect(),
        None => default_stopwords(),
    };
    let filters = h.cfg.filters.clone();
    let mut all = Vec::new();
    for c in corpora {
        all.extend(h.run_stage(&format!("corpus-{}", c.name), &filters, &c.messages)?);
    }
    let ranked = prefiltered_unigrams(&all, &stopwords);
    let rows: Vec<UnigramRow> =
        ranked.into_iter().enumerate().map(|(i, (token, frequency))| UnigramRow { rank: i + 1, token, frequency }).collect();
    for r in rows.iter().take(10) {
        let _ = writeln!(out.summary, "{:>3}. {} ({})", r.rank, r.token, r.frequency);
    }
    if rows.is_empty() {
        out.summary.push_str("no pre-filtered messages\n");
    }
    emit_rows(h, "prefilter_unigrams", &rows, out)
}

#[derive(Debug, Serialize)]
struct OrderRow {
    dataset: String,
    messages: usize,
    compared: usize,
    differing: usize,
}

#[derive(Debug, Serialize)]
struct OrderDiff<'a> {
    dataset: &'a str,
    id: &'a MessageId,
    first: Option<&'a Outcome>,
    second: Option<&'a Outcome>,
}

fn order_invariance(h: &mut Harness, corpora: &[LoadedCorpus], out: &mut RecipeOutput) -> Result<()> {
    need_corpora(corpora, "order-invariance")?;
    let filters = h.cfg.filters.clone();
    let mut rng = rand::rngs::StdRng::seed_from_u64(h.cfg.seed);
    let mut rows = Vec::new();
    let mut diff_lines = Vec::new();
    for c in corpora {
        let mut shuffled = c.messages.clone();
        shuffled.shuffle(&mut rng);
        let a = h.run_stage(&format!("order-a-{}", c.name), &filters, &c.messages)?;
        let b = h.run_stage(&format!("order-b-{}", c.name), &filters, &shuffled)?;
        let a: BTreeMap<&MessageId, &Outcome> = a.iter().map(|r| (&r.id, &r.outcome)).collect();
        let b: BTreeMap<&MessageId, &Outcome> = b.iter().map(|r| (&r.id, &r.outcome)).collect();
        let mut differing = 0;
        for m in &c.messages {
            let (x, y) = (a.get(&m.id).copied(), b.get(&m.id).copied());
            if x != y {
                differing += 1;
                let line = serde_json::to_string(&OrderDiff { dataset: &c.name, id: &m.id, first: x, second: y })
                    .expect("diff serializes");
                diff_lines.push(line);
            }
        }
        let compared = c.messages.iter().filter(|m| a.contains_key(&m.id) && b.contains_key(&m.id)).count();
        let _ = writeln!(out.summary, "{:<12} {} messages, {} compared, {} differing", c.name, c.messages.len(), compared, differing);
        rows.push(OrderRow { dataset: c.name.clone(), messages: c.messages.len(), compared, differing });
    }
    let mut jsonl = diff_lines.join("\n");
    if !jsonl.is_empty() {
        jsonl.push('\n');
    }
    out.files.push(h.dir.write_report("order_diff.jsonl", jsonl.as_bytes())?);
    if rows.iter().any(|r| r.differing > 0) {
        warn!("order-invariance: outcomes depend on send order; see order_diff.jsonl");
    } else {
        info!("order-invariance: no per-id differences");
    }
    emit_rows(h, "order_invariance", &rows, out)
}
