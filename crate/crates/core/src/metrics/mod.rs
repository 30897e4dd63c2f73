//! Scoring of reconciled outcomes against ground truth. All rates are exact
//! rationals; rounding happens only when a report is written out.

mod breakdown;
mod emit;

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign};

use num_rational::Ratio;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::model::{Label, Message, MessageId, OutcomeKind};
use crate::reconcile::OutcomeRecord;

pub use breakdown::{
    default_stopwords, filter_precision, prefiltered_unigrams, stratified_recall, tally_firings, FilterTallies,
    GroupRecall, StratifiedRecall,
};
pub use emit::{write_plot_data, write_reports_csv, write_stratified_csv, PlotBar, DEFAULT_DECIMALS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{} record(s) without ground truth: {}", ids.len(), preview(ids))]
    MissingLabels { ids: Vec<MessageId> },
}

fn preview(ids: &[MessageId]) -> String {
    let shown: Vec<&str> = ids.iter().take(5).map(MessageId::as_str).collect();
    let more = if ids.len() > 5 { ", ..." } else { "" };
    format!("{}{more}", shown.join(", "))
}

/// A reconciled record paired with its corpus message.
#[derive(Debug, Clone, Copy)]
pub struct Scored<'a> {
    pub record: &'a OutcomeRecord,
    pub message: &'a Message,
    pub label: Label,
}

/// Pair every record with its labeled corpus message.
pub fn join<'a>(records: &'a [OutcomeRecord], corpus: &'a [Message]) -> Result<Vec<Scored<'a>>, MetricsError> {
    let by_id: HashMap<&MessageId, &Message> = corpus.iter().map(|m| (&m.id, m)).collect();
    let mut out = Vec::with_capacity(records.len());
    let mut missing = Vec::new();
    for r in records {
        match by_id.get(&r.id).and_then(|m| m.label.map(|l| (*m, l))) {
            Some((message, label)) => out.push(Scored { record: r, message, label }),
            None => missing.push(r.id.clone()),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(MetricsError::MissingLabels { ids: missing })
    }
}

/// Confusion counts with hate as the positive class. Pre-filtered records
/// count as moderated and are also tallied separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub prefiltered_hate: u64,
    pub prefiltered_benign: u64,
}

impl ConfusionCounts {
    pub fn tally(&mut self, outcome: OutcomeKind, label: Label) {
        let blocked = outcome != OutcomeKind::Passed;
        let prefiltered = outcome == OutcomeKind::PreFiltered;
        match (label, blocked) {
            (Label::Hate, true) => self.tp += 1,
            (Label::Hate, false) => self.fn_ += 1,
            (Label::Benign, true) => self.fp += 1,
            (Label::Benign, false) => self.tn += 1,
        }
        match (label, prefiltered) {
            (Label::Hate, true) => self.prefiltered_hate += 1,
            (Label::Benign, true) => self.prefiltered_benign += 1,
            _ => {}
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn hate(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn benign(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn prefiltered(&self) -> u64 {
        self.prefiltered_hate + self.prefiltered_benign
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
        self.prefiltered_hate += o.prefiltered_hate;
        self.prefiltered_benign += o.prefiltered_benign;
    }
}

pub fn confusion(scored: &[Scored<'_>]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for s in scored {
        c.tally(s.record.outcome.kind(), s.label);
    }
    c
}

/// Join and count in one step.
pub fn confusion_of(records: &[OutcomeRecord], corpus: &[Message]) -> Result<ConfusionCounts, MetricsError> {
    Ok(confusion(&join(records, corpus)?))
}

/// An exact rate, or the reason it is undefined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rate {
    Value(Ratio<u128>),
    Absent(String),
}

impl Rate {
    pub fn ratio(num: u128, den: u128, absent: &str) -> Rate {
        if den == 0 {
            Rate::Absent(absent.to_string())
        } else {
            Rate::Value(Ratio::new(num, den))
        }
    }

    pub fn value(&self) -> Option<Ratio<u128>> {
        match self {
            Rate::Value(r) => Some(*r),
            Rate::Absent(_) => None,
        }
    }

    pub fn to_f64(&self) -> Option<f64> {
        self.value().map(|r| *r.numer() as f64 / *r.denom() as f64)
    }

    pub fn is_absent(&self) -> bool {
        matches!(self, Rate::Absent(_))
    }

    /// Fixed-point rendering; empty when absent.
    pub fn format(&self, decimals: usize) -> String {
        self.to_f64().map(|v| format!("{v:.decimals$}")).unwrap_or_default()
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Value(r) => write!(f, "{} ({r})", self.format(DEFAULT_DECIMALS)),
            Rate::Absent(reason) => write!(f, "absent: {reason}"),
        }
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Present {
            value: f64,
            exact: String,
        }
        #[derive(Serialize)]
        struct Missing<'a> {
            absent: &'a str,
        }
        match self {
            Rate::Value(r) => {
                let value = self.format(DEFAULT_DECIMALS).parse().expect("formatted float parses");
                Present { value, exact: r.to_string() }.serialize(s)
            }
            Rate::Absent(reason) => Missing { absent: reason }.serialize(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsReport {
    pub group: String,
    pub counts: ConfusionCounts,
    pub accuracy: Rate,
    pub precision: Rate,
    pub recall: Rate,
    pub tnr: Rate,
    pub f1_pr: Rate,
    pub f1_tpr_tnr: Rate,
    /// Pre-filtered share of hate records.
    pub prefilter_rate: Rate,
}

/// Every headline rate from one set of counts.
pub fn rates(c: &ConfusionCounts) -> MetricsReport {
    rates_for("overall", c)
}

pub fn rates_for(group: &str, c: &ConfusionCounts) -> MetricsReport {
    let (tp, fp, tn, fn_) = (c.tp as u128, c.fp as u128, c.tn as u128, c.fn_ as u128);
    let (pos, neg) = (tp + fn_, tn + fp);
    let precision = Rate::ratio(tp, tp + fp, "no moderated records");
    let recall = Rate::ratio(tp, pos, "no hate records");
    let tnr = Rate::ratio(tn, neg, "no benign records");
    let f1_pr = match (&precision, &recall) {
        (Rate::Value(_), Rate::Value(_)) => Rate::ratio(2 * tp, 2 * tp + fp + fn_, "undefined"),
        _ => Rate::Absent("precision or recall undefined".into()),
    };
    let f1_tpr_tnr = match (&recall, &tnr) {
        // Harmonic mean of tp/P and tn/N, multiplied through by P*N.
        (Rate::Value(_), Rate::Value(_)) if tp == 0 && tn == 0 => Rate::Value(Ratio::from_integer(0)),
        (Rate::Value(_), Rate::Value(_)) => Rate::ratio(2 * tp * tn, tp * neg + tn * pos, "undefined"),
        _ => Rate::Absent("recall or TNR undefined".into()),
    };
    MetricsReport {
        group: group.to_string(),
        counts: *c,
        accuracy: Rate::ratio(tp + tn, pos + neg, "no records"),
        precision,
        recall,
        tnr,
        f1_pr,
        f1_tpr_tnr,
        prefilter_rate: Rate::ratio(c.prefiltered_hate as u128, pos, "no hate records"),
    }
}
