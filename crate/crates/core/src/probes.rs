//! Deterministic probe generators: slur substitution for counterfactual
//! texts, rule-based perturbations of sensitive fragments, and loaders for
//! user-authored probe sets.

use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use regex::{Captures, Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Label, Message};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("fragment {fragment:?} too short for {method} (needs {min} chars)")]
    TooShort { fragment: String, method: PerturbMethod, min: usize },
    #[error("slur map: {0}")]
    SlurMap(String),
    #[error("probe set line {line}: {reason}")]
    ProbeSet { line: usize, reason: String },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("unknown perturbation method {0:?}")]
    UnknownMethod(String),
}

fn io_err(path: &Path, e: std::io::Error) -> ProbeError {
    ProbeError::Io { path: path.display().to_string(), reason: e.to_string() }
}

/// Ordered (group term, replacement) pairs. The file format is a JSON array
/// of two-element arrays.
#[derive(Debug, Clone)]
pub struct SlurMap {
    pairs: Vec<(String, String)>,
    pattern: Option<Regex>,
    /// capture group index -> replacement
    replacements: Vec<String>,
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

impl SlurMap {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self, ProbeError> {
        if let Some((t, _)) = pairs.iter().find(|(t, _)| t.trim().is_empty()) {
            return Err(ProbeError::SlurMap(format!("empty group term {t:?}")));
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(pairs[i].0.chars().count()));
        let mut alternatives = Vec::with_capacity(order.len());
        let mut replacements = Vec::with_capacity(order.len());
        for i in order {
            let term = &pairs[i].0;
            let lead = if term.starts_with(is_word) { r"\b" } else { "" };
            let tail = if term.ends_with(is_word) { r"\b" } else { "" };
            alternatives.push(format!("({lead}{}{tail})", regex::escape(term)));
            replacements.push(pairs[i].1.clone());
        }
        let pattern = if alternatives.is_empty() {
            None
        } else {
            let re = RegexBuilder::new(&alternatives.join("|"))
                .case_insensitive(true)
                .build()
                .map_err(|e| ProbeError::SlurMap(e.to_string()))?;
            Some(re)
        };
        Ok(SlurMap { pairs, pattern, replacements })
    }

    pub fn from_json(json: &str) -> Result<Self, ProbeError> {
        let pairs: Vec<(String, String)> = serde_json::from_str(json).map_err(|e| ProbeError::SlurMap(e.to_string()))?;
        Self::new(pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// Whether any group term occurs on a word boundary.
    pub fn matches(&self, text: &str) -> bool {
        self.pattern.as_ref().is_some_and(|re| re.is_match(text))
    }
}

/// Replace every word-boundary occurrence of each group term, longest term
/// first, left to right, in one pass. Replacements are not rescanned.
pub fn counterfactual(text: &str, map: &SlurMap) -> String {
    let Some(re) = &map.pattern else {
        return text.to_string();
    };
    re.replace_all(text, |caps: &Captures| {
        let group = (1..caps.len()).find(|&i| caps.get(i).is_some()).expect("one alternative matched");
        map.replacements[group - 1].clone()
    })
    .into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMethod {
    Punctuation,
    Spaces,
    PartialObfuscation,
    PhoneticPlay,
    ReversedLetters,
    Combination,
}

impl PerturbMethod {
    pub const ALL: [PerturbMethod; 6] = [
        PerturbMethod::Punctuation,
        PerturbMethod::Spaces,
        PerturbMethod::PartialObfuscation,
        PerturbMethod::PhoneticPlay,
        PerturbMethod::ReversedLetters,
        PerturbMethod::Combination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbMethod::Punctuation => "punctuation",
            PerturbMethod::Spaces => "spaces",
            PerturbMethod::PartialObfuscation => "partial_obfuscation",
            PerturbMethod::PhoneticPlay => "phonetic_play",
            PerturbMethod::ReversedLetters => "reversed_letters",
            PerturbMethod::Combination => "combination",
        }
    }

    fn min_len(self) -> usize {
        match self {
            PerturbMethod::ReversedLetters => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for PerturbMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbMethod {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PerturbMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_lowercase().replace(['-', ' '], "_"))
            .ok_or_else(|| ProbeError::UnknownMethod(s.to_string()))
    }
}

fn punctuate(c: &[char]) -> String {
    let mut out: String = c[..1].iter().collect();
    out.push('.');
    out.extend(&c[1..3]);
    out.push(' ');
    out.extend(&c[3..]);
    out
}

/// Apply one perturbation rule. Lengths are in chars.
pub fn perturb(fragment: &str, method: PerturbMethod) -> Result<String, ProbeError> {
    let c: Vec<char> = fragment.chars().collect();
    if c.len() < method.min_len() {
        return Err(ProbeError::TooShort { fragment: fragment.to_string(), method, min: method.min_len() });
    }
    Ok(match method {
        PerturbMethod::Punctuation => punctuate(&c),
        PerturbMethod::Spaces => {
            let mut out: String = c[..3].iter().collect();
            out.push(' ');
            out.extend(&c[3..]);
            out
        }
        PerturbMethod::PartialObfuscation => {
            let mut out: String = c[..1].iter().collect();
            out.push_str("***");
            out.extend(&c[3..]);
            out
        }
        PerturbMethod::PhoneticPlay => {
            let mut out: String = c[..3].iter().collect();
            out.push(c[2]);
            out.extend(&c[3..]);
            out
        }
        PerturbMethod::ReversedLetters => c.iter().rev().collect(),
        PerturbMethod::Combination => {
            let plural: Vec<char> = c.iter().copied().chain("es".chars()).collect();
            punctuate(&plural)
        }
    })
}

/// One row of a perturbation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Unperturbed,
    PhoneticPlay,
    Spaces,
    Punctuation,
    Combination,
    PartialObfuscation,
    ReversedLetters,
}

impl Variant {
    /// Suite order.
    pub const ALL: [Variant; 7] = [
        Variant::Unperturbed,
        Variant::PhoneticPlay,
        Variant::Spaces,
        Variant::Punctuation,
        Variant::Combination,
        Variant::PartialObfuscation,
        Variant::ReversedLetters,
    ];

    pub fn method(self) -> Option<PerturbMethod> {
        Some(match self {
            Variant::Unperturbed => return None,
            Variant::PhoneticPlay => PerturbMethod::PhoneticPlay,
            Variant::Spaces => PerturbMethod::Spaces,
            Variant::Punctuation => PerturbMethod::Punctuation,
            Variant::Combination => PerturbMethod::Combination,
            Variant::PartialObfuscation => PerturbMethod::PartialObfuscation,
            Variant::ReversedLetters => PerturbMethod::ReversedLetters,
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Unperturbed => "Unperturbed",
            Variant::PhoneticPlay => "Phonetic Play",
            Variant::Spaces => "Adding Spaces",
            Variant::Punctuation => "Adding Punctuation",
            Variant::Combination => "Combination of Methods",
            Variant::PartialObfuscation => "Partial Obfuscation",
            Variant::ReversedLetters => "Reversed Letters",
        }
    }
}

/// The unperturbed fragment followed by the six perturbations. Reversal is
/// applied to the plural form, like the combined method.
pub fn perturbation_suite(fragment: &str) -> Result<Vec<(Variant, String)>, ProbeError> {
    Variant::ALL
        .into_iter()
        .map(|v| {
            let text = match v.method() {
                None => fragment.to_string(),
                Some(PerturbMethod::ReversedLetters) => perturb(&format!("{fragment}es"), PerturbMethod::ReversedLetters)?,
                Some(m) => perturb(fragment, m)?,
            };
            Ok((v, text))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    Pass,
    Moderate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub expected: Expectation,
}

/// Read a JSONL probe set into messages. A probe expected to pass is labeled
/// benign, one expected to be moderated hateful.
pub fn read_probe_set<R: BufRead>(input: R, prefix: &str) -> Result<Vec<Message>, ProbeError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let err = |reason: String| ProbeError::ProbeSet { line: i + 1, reason };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ProbeRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let id = rec.id.unwrap_or_else(|| format!("{prefix}-{:06}", out.len()));
        let label = match rec.expected {
            Expectation::Pass => Label::Benign,
            Expectation::Moderate => Label::Hate,
        };
        out.push(Message::new(id, rec.text).with_label(label).with_source(prefix));
    }
    Ok(out)
}

pub fn load_probe_set(path: impl AsRef<Path>, prefix: &str) -> Result<Vec<Message>, ProbeError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_probe_set(std::io::BufReader::new(file), prefix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(pairs: &[(&str, &str)]) -> SlurMap {
        SlurMap::new(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()).unwrap()
    }

    #[test]
    fn table_goldens() {
        let suite = perturbation_suite("bitch").unwrap();
        let texts: Vec<&str> = suite.iter().map(|(_, t)| t.as_str()).collect();
        assert_eq!(texts, ["bitch", "bittch", "bit ch", "b.it ch", "b.it ches", "b***ch", "sehctib"]);
        assert_eq!(suite[0].0, Variant::Unperturbed);
    }

    #[test]
    fn single_method_examples() {
        assert_eq!(perturb("bitch", PerturbMethod::Spaces).unwrap(), "bit ch");
        assert_eq!(perturb("bitches", PerturbMethod::ReversedLetters).unwrap(), "sehctib");
        assert_eq!(perturb("bitch", PerturbMethod::PartialObfuscation).unwrap(), "b***ch");
    }

    #[test]
    fn short_suite() {
        let texts: Vec<String> = perturbation_suite("abc").unwrap().into_iter().map(|(_, t)| t).collect();
        assert_eq!(texts, ["abc", "abcc", "abc ", "a.bc ", "a.bc es", "a***", "secba"]);
    }

    #[test]
    fn too_short() {
        assert!(matches!(perturb("ab", PerturbMethod::Spaces), Err(ProbeError::TooShort { min: 3, .. })));
        assert_eq!(perturb("ab", PerturbMethod::ReversedLetters).unwrap(), "ba");
        assert!(perturb("a", PerturbMethod::ReversedLetters).is_err());
    }

    #[test]
    fn counterfactual_single_pass() {
        let m = map(&[("black people", "X")]);
        assert_eq!(counterfactual("black people black people", &m), "X X");
        assert_eq!(counterfactual("nothing here", &m), "nothing here");
        assert_eq!(counterfactual("Black People!", &m), "X!");
        assert_eq!(counterfactual("blackpeople", &m), "blackpeople");
    }

    #[test]
    fn counterfactual_longest_first_no_rescan() {
        let m = map(&[("black", "A"), ("black people", "B"), ("B", "never")]);
        assert_eq!(counterfactual("black people and black cats", &m), "B and A cats");
    }

    #[test]
    fn empty_terms_rejected() {
        assert!(SlurMap::new(vec![(" ".into(), "x".into())]).is_err());
        assert_eq!(counterfactual("keep", &map(&[])), "keep");
    }

    #[test]
    fn slur_map_json() {
        let m = SlurMap::from_json(r#"[["jews", "J"], ["women", "W"]]"#).unwrap();
        assert_eq!(counterfactual("women and jews", &m), "W and J");
    }

    #[test]
    fn probe_set_lines() {
        let input = "{\"text\":\"we reclaim it\",\"expected\":\"pass\"}\n\n{\"id\":\"x\",\"text\":\"t\",\"expected\":\"moderate\"}\n";
        let msgs = read_probe_set(input.as_bytes(), "policy").unwrap();
        assert_eq!(msgs[0].id.as_str(), "policy-000000");
        assert_eq!(msgs[0].label, Some(Label::Benign));
        assert_eq!(msgs[1].id.as_str(), "x");
        assert!(matches!(read_probe_set(&b"{}"[..], "p"), Err(ProbeError::ProbeSet { line: 1, .. })));
    }

    #[test]
    fn method_names() {
        for m in PerturbMethod::ALL {
            assert_eq!(m.as_str().parse::<PerturbMethod>().unwrap(), m);
        }
        assert_eq!("Phonetic Play".parse::<PerturbMethod>().unwrap(), PerturbMethod::PhoneticPlay);
    }

    proptest! {
        #[test]
        fn reverse_is_involution(s in "\\PC{2,12}") {
            let once = perturb(&s, PerturbMethod::ReversedLetters).unwrap();
            prop_assert_eq!(perturb(&once, PerturbMethod::ReversedLetters).unwrap(), s);
        }

        #[test]
        fn obfuscation_keeps_endpoints(s in "[a-z]{3,12}") {
            let out = perturb(&s, PerturbMethod::PartialObfuscation).unwrap();
            prop_assert!(out.starts_with(&s[..1]));
            prop_assert!(out.ends_with(&s[3..]));
            prop_assert_eq!(&out[1..4], "***");
        }

        #[test]
        fn unperturbed_is_input(s in "[a-z]{3,12}") {
            prop_assert_eq!(&perturbation_suite(&s).unwrap()[0].1, &s);
        }

        #[test]
        fn counterfactual_touches_only_terms(
            words in proptest::collection::vec(prop_oneof!["cat", "dog", "black", "people", "x1"], 0..12),
            seps in proptest::collection::vec(prop_oneof![" ", ", ", "!", "  "], 12),
        ) {
            let text: String = words.iter().zip(&seps).map(|(w, s)| format!("{w}{s}")).collect();
            let m = map(&[("black people", "<S>"), ("dog", "<D>")]);
            let out = counterfactual(&text, &m);
            prop_assert_eq!(out != text, m.matches(&text));
            let undo = out.replace("<S>", "black people").replace("<D>", "dog");
            prop_assert_eq!(undo, text);
        }
    }
}
