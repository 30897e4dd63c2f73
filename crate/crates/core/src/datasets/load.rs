use std::collections::HashMap;

use log::debug;

use super::{DatasetError, DatasetKind, DatasetSpec};
use crate::model::{Label, Message};

/// Inclusive classifier-score band for ToxiGen hate rows.
pub const TOXIGEN_HATE_BAND: (f64, f64) = (0.8, 1.0);
/// Inclusive classifier-score band for ToxiGen benign rows.
pub const TOXIGEN_BENIGN_BAND: (f64, f64) = (0.0, 0.2);

/// Binary label from a mean offensiveness score.
pub fn sbic_label(score: f64, threshold: f64) -> Result<Label, DatasetError> {
    for (name, v) in [("score", score), ("threshold", threshold)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(DatasetError::Validation(format!("{name} {v} outside [0, 1]")));
        }
    }
    Ok(if score >= threshold { Label::Hate } else { Label::Benign })
}

struct Table {
    path: std::path::PathBuf,
    kind: DatasetKind,
    headers: Vec<String>,
}

type Rows = csv::Reader<std::fs::File>;

impl Table {
    fn open(spec: &DatasetSpec) -> Result<(Self, Rows), DatasetError> {
        let path = spec.path.as_path();
        let file = std::fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
        let tsv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"));
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(if tsv { b'\t' } else { b',' })
            .flexible(true)
            .from_reader(file);
        let headers = reader.headers()?.iter().map(|h| h.trim_start_matches('\u{feff}').trim().to_string()).collect();
        Ok((Table { path: path.to_path_buf(), kind: spec.kind, headers }, reader))
    }

    /// Index of the override column, or of the first default alias present.
    fn column(&self, bound: &Option<String>, defaults: &[&str]) -> Result<usize, DatasetError> {
        self.find(bound, defaults).ok_or_else(|| DatasetError::MissingColumn {
            path: self.path.clone(),
            kind: self.kind,
            column: bound.clone().unwrap_or_else(|| defaults.join("|")),
        })
    }

    fn find(&self, bound: &Option<String>, defaults: &[&str]) -> Option<usize> {
        match bound {
            Some(name) => self.headers.iter().position(|h| h == name),
            None => defaults.iter().find_map(|d| self.headers.iter().position(|h| h == d)),
        }
    }

    fn bad(&self, row: usize, col: usize, value: &str) -> DatasetError {
        DatasetError::BadValue {
            path: self.path.clone(),
            row: row + 1,
            column: self.headers[col].clone(),
            value: value.to_string(),
        }
    }
}

fn field(rec: &csv::StringRecord, col: usize) -> &str {
    rec.get(col).unwrap_or("").trim()
}

fn parse_label(value: &str) -> Option<Label> {
    match value.trim().to_lowercase().as_str() {
        "1" | "1.0" | "hate" | "hateful" | "true" | "implicit_hate" | "explicit_hate" => Some(Label::Hate),
        "0" | "0.0" | "nothate" | "not_hate" | "not hate" | "false" | "benign" => Some(Label::Benign),
        _ => None,
    }
}

/// Split a target cell: plain value, comma list, or bracketed list with
/// quoted items.
pub(crate) fn split_targets(cell: &str) -> Vec<String> {
    let inner = cell.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .map(|t| t.trim().trim_matches(|c| c == '"' || c == '\'').trim())
        .filter(|t| !t.is_empty() && !t.eq_ignore_ascii_case("none") && !t.eq_ignore_ascii_case("nan"))
        .map(str::to_string)
        .collect()
}

fn id(kind: DatasetKind, row: usize) -> String {
    format!("{kind}-{row:06}")
}

/// Read one corpus into messages. SBIC rows are aggregated per post; ToxiGen
/// rows outside both score bands are dropped.
pub fn load(spec: &DatasetSpec) -> Result<Vec<Message>, DatasetError> {
    match spec.kind {
        DatasetKind::DynaHate => load_simple(spec, &["text"], &["label"], &["target"], true),
        DatasetKind::Ihc => load_simple(spec, &["post"], &["class"], &["target"], false),
        DatasetKind::ToxiGen => load_toxigen(spec),
        DatasetKind::Sbic => load_sbic(spec),
    }
}

fn load_simple(
    spec: &DatasetSpec,
    text: &[&str],
    label: &[&str],
    target: &[&str],
    target_required: bool,
) -> Result<Vec<Message>, DatasetError> {
    let (t, mut rows) = Table::open(spec)?;
    let c = &spec.columns;
    let text_col = t.column(&c.text, text)?;
    let label_col = t.column(&c.label, label)?;
    let target_col = if target_required || c.target.is_some() {
        Some(t.column(&c.target, target)?)
    } else {
        t.find(&None, target)
    };
    let mut out = Vec::new();
    for (row, rec) in rows.records().enumerate() {
        let rec = rec?;
        let raw_label = field(&rec, label_col);
        let label = parse_label(raw_label).ok_or_else(|| t.bad(row, label_col, raw_label))?;
        let targets = target_col.map(|c| split_targets(field(&rec, c))).unwrap_or_default();
        out.push(
            Message::new(id(spec.kind, row), rec.get(text_col).unwrap_or(""))
                .with_label(label)
                .with_targets(targets)
                .with_source(spec.kind.as_str()),
        );
    }
    Ok(out)
}

fn in_band(v: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&v)
}

fn load_toxigen(spec: &DatasetSpec) -> Result<Vec<Message>, DatasetError> {
    let (t, mut rows) = Table::open(spec)?;
    let c = &spec.columns;
    let text_col = t.column(&c.text, &["generation", "text"])?;
    let score_col = t.column(&c.label, &["roberta_prediction"])?;
    let prompt_col = t.column(&c.prompt_label, &["prompt_label"])?;
    let target_col = t.column(&c.target, &["target_group", "group"])?;
    let mut out = Vec::new();
    let mut dropped = 0usize;
    for (row, rec) in rows.records().enumerate() {
        let rec = rec?;
        let raw_score = field(&rec, score_col);
        let score: f64 = raw_score.parse().map_err(|_| t.bad(row, score_col, raw_score))?;
        let raw_prompt = field(&rec, prompt_col);
        let prompt = parse_label(raw_prompt).ok_or_else(|| t.bad(row, prompt_col, raw_prompt))?;
        let label = match prompt {
            Label::Hate if in_band(score, TOXIGEN_HATE_BAND) => Label::Hate,
            Label::Benign if in_band(score, TOXIGEN_BENIGN_BAND) => Label::Benign,
            _ => {
                dropped += 1;
                continue;
            }
        };
        out.push(
            Message::new(id(spec.kind, row), rec.get(text_col).unwrap_or(""))
                .with_label(label)
                .with_targets(split_targets(field(&rec, target_col)))
                .with_source(spec.kind.as_str()),
        );
    }
    debug!("toxigen: kept {}, dropped {dropped} outside score bands", out.len());
    Ok(out)
}

struct Post {
    row: usize,
    text: String,
    sum: f64,
    rated: usize,
    targets: Vec<String>,
}

fn load_sbic(spec: &DatasetSpec) -> Result<Vec<Message>, DatasetError> {
    sbic_label(0.0, spec.threshold)?;
    let (t, mut rows) = Table::open(spec)?;
    let c = &spec.columns;
    let text_col = t.column(&c.text, &["post"])?;
    let score_col = t.column(&c.label, &["offensiveYN"])?;
    let target_col = t.column(&c.target, &["targetMinority"])?;
    let mut posts: Vec<Post> = Vec::new();
    let mut by_text: HashMap<String, usize> = HashMap::new();
    for (row, rec) in rows.records().enumerate() {
        let rec = rec?;
        let text = rec.get(text_col).unwrap_or("").to_string();
        let idx = *by_text.entry(text.clone()).or_insert_with(|| {
            posts.push(Post { row, text, sum: 0.0, rated: 0, targets: Vec::new() });
            posts.len() - 1
        });
        let post = &mut posts[idx];
        let raw = field(&rec, score_col);
        if !raw.is_empty() {
            let v: f64 = raw.parse().map_err(|_| t.bad(row, score_col, raw))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(t.bad(row, score_col, raw));
            }
            post.sum += v;
            post.rated += 1;
        }
        for target in split_targets(field(&rec, target_col)) {
            if !post.targets.contains(&target) {
                post.targets.push(target);
            }
        }
    }
    let mut out = Vec::with_capacity(posts.len());
    for p in posts {
        if p.rated == 0 {
            debug!("sbic: skipping unrated post at row {}", p.row + 1);
            continue;
        }
        let score = (p.sum / p.rated as f64).clamp(0.0, 1.0);
        out.push(
            Message::new(id(spec.kind, p.row), p.text)
                .with_label(sbic_label(score, spec.threshold)?)
                .with_targets(p.targets)
                .with_source(spec.kind.as_str()),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn file(ext: &str, body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    fn spec(kind: DatasetKind, f: &tempfile::NamedTempFile) -> DatasetSpec {
        DatasetSpec::new(kind, f.path())
    }

    #[test]
    fn sbic_label_examples() {
        assert_eq!(sbic_label(1.0, 1.0).unwrap(), Label::Hate);
        assert_eq!(sbic_label(0.5, 1.0).unwrap(), Label::Benign);
        assert_eq!(sbic_label(0.5, 0.5).unwrap(), Label::Hate);
        assert!(sbic_label(1.2, 1.0).is_err());
        assert!(sbic_label(0.5, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn sbic_label_monotone(s in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if sbic_label(s, lo).unwrap() == Label::Benign {
                prop_assert_eq!(sbic_label(s, hi).unwrap(), Label::Benign);
            }
        }
    }

    #[test]
    fn dynahate_rows() {
        let f = file(".csv", "acl.id,text,label,target\n1,\"hi, there\",nothate,none\n2,you people,hate,bla.wom\n");
        let msgs = load(&spec(DatasetKind::DynaHate, &f)).unwrap();
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].id.as_str(), "dynahate-000000");
        assert_eq!(msgs[0].text, "hi, there");
        assert_eq!(msgs[0].label, Some(Label::Benign));
        assert!(msgs[0].targets.is_empty());
        assert_eq!(msgs[1].targets, ["bla.wom"]);
    }

    #[test]
    fn empty_file_with_header() {
        let f = file(".csv", "text,label,target\n");
        assert!(load(&spec(DatasetKind::DynaHate, &f)).unwrap().is_empty());
    }

    #[test]
    fn missing_column_is_named() {
        let f = file(".csv", "text,label\nx,hate\n");
        let err = load(&spec(DatasetKind::DynaHate, &f)).unwrap_err();
        assert!(matches!(err, DatasetError::MissingColumn { ref column, .. } if column == "target"));
    }

    #[test]
    fn bad_label_is_reported() {
        let f = file(".csv", "text,label,target\nx,maybe,bla\n");
        let err = load(&spec(DatasetKind::DynaHate, &f)).unwrap_err();
        assert!(matches!(err, DatasetError::BadValue { row: 1, .. }));
    }

    #[test]
    fn toxigen_bands() {
        let f = file(
            ".csv",
            "prompt,generation,prompt_label,roberta_prediction,target_group\n\
             p,a,1,0.95,black\np,b,1,0.5,black\np,c,0,0.1,Muslim\np,d,0,0.9,jewish\np,e,1,0.8,women\n",
        );
        let msgs = load(&spec(DatasetKind::ToxiGen, &f)).unwrap();
        let got: Vec<_> = msgs.iter().map(|m| (m.text.as_str(), m.label.unwrap())).collect();
        assert_eq!(got, [("a", Label::Hate), ("c", Label::Benign), ("e", Label::Hate)]);
        assert_eq!(msgs[1].id.as_str(), "toxigen-000002");
    }

    #[test]
    fn sbic_aggregates_annotators() {
        let f = file(
            ".csv",
            "post,offensiveYN,targetMinority\n\
             x,1.0,jews\nx,1.0,\"black folks, jews\"\ny,1.0,\ny,0.0,\nz,0.5,women\nz,,women\n",
        );
        let msgs = load(&spec(DatasetKind::Sbic, &f)).unwrap();
        assert_eq!(msgs.len(), 3);
        assert_eq!(msgs[0].label, Some(Label::Hate));
        assert_eq!(msgs[0].targets, ["jews", "black folks"]);
        assert_eq!(msgs[1].label, Some(Label::Benign));
        assert_eq!(msgs[2].label, Some(Label::Benign));
        let half = load(&spec(DatasetKind::Sbic, &f).with_threshold(0.5)).unwrap();
        assert_eq!(half[1].label, Some(Label::Hate));
        assert_eq!(half[2].label, Some(Label::Hate));
    }

    #[test]
    fn ihc_tsv_without_targets() {
        let f = file(".tsv", "post\tclass\nhello\tnot_hate\nthem\timplicit_hate\n");
        let msgs = load(&spec(DatasetKind::Ihc, &f)).unwrap();
        assert_eq!(msgs[1].label, Some(Label::Hate));
        assert!(msgs[1].targets.is_empty());
    }

    #[test]
    fn target_cells() {
        assert_eq!(split_targets("['black folks', 'jews']"), ["black folks", "jews"]);
        assert_eq!(split_targets("[\"women\"]"), ["women"]);
        assert_eq!(split_targets("[]"), Vec::<String>::new());
        assert_eq!(split_targets("bla.wom"), ["bla.wom"]);
    }
}
