use std::io::Write;

use serde::Serialize;

use super::{MetricsReport, StratifiedRecall};

/// Decimal places used when rates are written out.
pub const DEFAULT_DECIMALS: usize = 3;

/// One row per report. Absent rates are empty cells.
pub fn write_reports_csv<W: Write>(out: W, reports: &[MetricsReport], decimals: usize) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "group",
        "total",
        "tp",
        "fp",
        "tn",
        "fn",
        "prefiltered_hate",
        "prefiltered_benign",
        "accuracy",
        "precision",
        "recall",
        "tnr",
        "f1_pr",
        "f1_tpr_tnr",
        "prefilter_rate",
    ])?;
    for r in reports {
        let c = &r.counts;
        let mut row = vec![r.group.clone()];
        row.extend([c.total(), c.tp, c.fp, c.tn, c.fn_, c.prefiltered_hate, c.prefiltered_benign].map(|n| n.to_string()));
        row.extend(
            [&r.accuracy, &r.precision, &r.recall, &r.tnr, &r.f1_pr, &r.f1_tpr_tnr, &r.prefilter_rate]
                .map(|rate| rate.format(decimals)),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stratified_csv<W: Write>(out: W, s: &StratifiedRecall, decimals: usize) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "hate", "blocked", "prefiltered", "recall", "pf_share"])?;
    for (g, r) in &s.groups {
        w.write_record([
            g.clone(),
            r.hate.to_string(),
            r.blocked.to_string(),
            r.prefiltered.to_string(),
            r.recall.format(decimals),
            r.pf_share.format(decimals),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Stacked-bar values: recall split into channel-filter and pre-filter parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotBar {
    pub group: String,
    pub recall: f64,
    pub channel: f64,
    pub prefiltered: f64,
}

impl PlotBar {
    pub fn from_stratified(s: &StratifiedRecall) -> Vec<PlotBar> {
        s.groups
            .iter()
            .filter_map(|(g, r)| {
                let recall = r.recall.to_f64()?;
                let prefiltered = r.pf_share.to_f64()?;
                Some(PlotBar { group: g.clone(), recall, channel: recall - prefiltered, prefiltered })
            })
            .collect()
    }
}

pub fn write_plot_data<W: Write>(out: W, s: &StratifiedRecall) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for bar in PlotBar::from_stratified(s) {
        w.serialize(bar)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{rates, rates_for, stratified_recall, ConfusionCounts, Scored};
    use super::*;
    use crate::model::{Label, Message, Outcome};
    use crate::reconcile::OutcomeRecord;

    #[test]
    fn csv_has_every_column() {
        let c = ConfusionCounts { tp: 1, fp: 2, tn: 3, fn_: 4, prefiltered_hate: 1, prefiltered_benign: 0 };
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &[rates(&c), rates_for("empty", &ConfusionCounts::default())], 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0].split(',').count(), 15);
        assert_eq!(lines[1], "overall,10,1,2,3,4,1,0,0.400,0.333,0.200,0.600,0.250,0.300,0.200");
        assert_eq!(lines[2], "empty,0,0,0,0,0,0,0,,,,,,,");
    }

    #[test]
    fn plot_bars_split_recall() {
        let records = [
            OutcomeRecord { run_id: "r".into(), id: "a".into(), text: String::new(), outcome: Outcome::PreFiltered, latency: None },
            OutcomeRecord { run_id: "r".into(), id: "b".into(), text: String::new(), outcome: Outcome::Passed, latency: None },
        ];
        let corpus = [
            Message::new("a", "").with_label(Label::Hate).with_targets(["g"]),
            Message::new("b", "").with_label(Label::Hate).with_targets(["g"]),
        ];
        let scored: Vec<Scored> = super::super::join(&records, &corpus).unwrap();
        let bars = PlotBar::from_stratified(&stratified_recall(&scored, |m| m.targets.clone()));
        assert_eq!(bars, [PlotBar { group: "g".into(), recall: 0.5, channel: 0.0, prefiltered: 0.5 }]);
    }
}
