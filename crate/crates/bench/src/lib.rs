//! Deterministic fixtures shared by the benchmarks.

use std::time::Duration;

use modaudit_core::mock::{Lexicon, LexiconEntry};
use modaudit_core::transport::{EchoEntry, EventEntry, RawLogs, SentEntry};
use modaudit_core::{FilterLevel, Fragment, Label, Message, ModerationCategory};

const WORDS: [&str; 12] = ["the", "quick", "zorp", "fox", "blep", "mlem", "over", "lazy", "qux", "dog", "and", "then"];

pub fn lexicon() -> Lexicon {
    let mut entries = vec![
        LexiconEntry::prefilter("qux", ModerationCategory::Racism),
        LexiconEntry::channel("zorp", ModerationCategory::Racism, 1),
        LexiconEntry::channel("blep mlem", ModerationCategory::Misogyny, 3),
    ];
    for i in 0..200 {
        let cat = ModerationCategory::BUILTIN[i % 4].clone();
        entries.push(LexiconEntry::channel(&format!("term{i} tail{i}"), cat, (i % 4 + 1) as u8));
    }
    Lexicon::new(entries).expect("fixture lexicon is valid")
}

/// `n` messages of eight words each, every third one labeled hateful.
pub fn messages(n: usize) -> Vec<Message> {
    (0..n)
        .map(|i| {
            let text: Vec<&str> = (0..8).map(|k| WORDS[(i * 7 + k * 5) % WORDS.len()]).collect();
            let label = if i % 3 == 0 { Label::Hate } else { Label::Benign };
            Message::new(format!("m{i:06}"), text.join(" ")).with_label(label)
        })
        .collect()
}

/// Logs for `n` sends: a third echoed, a third moderated, a third silent.
pub fn logs(n: usize) -> RawLogs {
    let mut logs = RawLogs::default();
    for (i, m) in messages(n).into_iter().enumerate() {
        let at = Duration::from_millis(100 * i as u64);
        logs.sent.push(SentEntry { id: m.id.clone(), text: m.text.clone(), scheduled: at, sent_at: at });
        let recv = at + Duration::from_millis(30);
        match i % 3 {
            0 => logs.echoes.push(EchoEntry { id: m.id, text: m.text, recv_at: recv }),
            1 => logs.events.push(EventEntry {
                id: m.id,
                text: m.text.clone(),
                category: ModerationCategory::Racism,
                topics: vec!["RER".into()],
                fragments: vec![Fragment { text: m.text, category: ModerationCategory::Racism }],
                level: FilterLevel::MAX,
                recv_at: recv,
            }),
            _ => {}
        }
    }
    logs.ended_at = Duration::from_millis(100 * n as u64) + Duration::from_secs(10);
    logs
}
