//! Text normalization shared by the simulator and the unigram analysis.
//!
//! NFC, per-character lowercase, then split on every maximal run of
//! non-alphanumeric characters. Token spans point into the NFC text.

use std::borrow::Cow;

use unicode_normalization::{is_nfc_quick, IsNormalized, UnicodeNormalization};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub norm: String,
    /// Byte range in the NFC form of the input.
    pub start: usize,
    pub end: usize,
}

pub fn nfc(text: &str) -> Cow<'_, str> {
    match is_nfc_quick(text.chars()) {
        IsNormalized::Yes => Cow::Borrowed(text),
        _ => Cow::Owned(text.nfc().collect()),
    }
}

/// Tokenize an already-NFC string, keeping byte spans.
pub fn tokenize_nfc(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<Token> = None;
    for (pos, ch) in text.char_indices() {
        let end = pos + ch.len_utf8();
        for lc in ch.to_lowercase() {
            if lc.is_alphanumeric() {
                let tok = current.get_or_insert_with(|| Token {
                    norm: String::new(),
                    start: pos,
                    end,
                });
                tok.norm.push(lc);
                tok.end = end;
            } else if let Some(tok) = current.take() {
                tokens.push(tok);
            }
        }
    }
    tokens.extend(current);
    tokens
}

pub fn normalize(text: &str) -> Vec<String> {
    tokenize_nfc(&nfc(text)).into_iter().map(|t| t.norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn case_and_punctuation() {
        assert_eq!(normalize("Hello, WORLD"), vec!["hello", "world"]);
    }

    #[test]
    fn punctuation_splits_inside_words() {
        assert_eq!(normalize("b.it ch"), vec!["b", "it", "ch"]);
    }

    #[test]
    fn empty_input() {
        assert!(normalize("").is_empty());
        assert!(normalize("  ...!? ").is_empty());
    }

    #[test]
    fn decomposed_input_is_composed_first() {
        // "é" as e + COMBINING ACUTE would otherwise split at the mark.
        assert_eq!(normalize("cafe\u{301} ok"), vec!["café", "ok"]);
    }

    #[test]
    fn spans_cover_original_bytes() {
        let text = "Ab-CD  ef";
        let toks = tokenize_nfc(text);
        let spans: Vec<_> = toks.iter().map(|t| &text[t.start..t.end]).collect();
        assert_eq!(spans, vec!["Ab", "CD", "ef"]);
    }

    proptest! {
        #[test]
        fn tokens_are_nonempty_lowercase_alphanumeric(s in "\\PC{0,40}") {
            for t in normalize(&s) {
                prop_assert!(!t.is_empty());
                prop_assert!(t.chars().all(char::is_alphanumeric));
            }
        }

        #[test]
        fn deterministic_and_idempotent_on_joined(s in "[a-zA-Z0-9 ,.!]{0,40}") {
            let once = normalize(&s);
            prop_assert_eq!(&once, &normalize(&s));
            prop_assert_eq!(&once, &normalize(&once.join(" ")));
        }
    }
}
