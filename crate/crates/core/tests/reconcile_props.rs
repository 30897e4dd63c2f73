use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use modaudit_core::transport::{EchoEntry, EventEntry, RawLogs, SentEntry};
use modaudit_core::{
    reconcile, FilterLevel, Fragment, MessageId, ModerationCategory, OutcomeKind, ReconcileError,
};
use proptest::prelude::*;
use proptest::sample::subsequence;

const TIMEOUT: Duration = Duration::from_millis(1000);

#[derive(Debug, Clone, Copy)]
enum Fate {
    Echo,
    Event,
    Silent,
    Both,
    DupEcho,
    DupEvent,
    Early,
}

fn fate() -> impl Strategy<Value = Fate> {
    prop_oneof![
        4 => Just(Fate::Echo),
        4 => Just(Fate::Event),
        4 => Just(Fate::Silent),
        1 => Just(Fate::Both),
        1 => Just(Fate::DupEcho),
        1 => Just(Fate::DupEvent),
        1 => Just(Fate::Early),
    ]
}

fn ms(v: u64) -> Duration {
    Duration::from_millis(v)
}

fn event(id: &MessageId, text: &str, at: Duration) -> EventEntry {
    EventEntry {
        id: id.clone(),
        text: text.into(),
        category: ModerationCategory::Racism,
        topics: vec![],
        fragments: vec![Fragment { text: text.into(), category: ModerationCategory::Racism }],
        level: FilterLevel::MAX,
        recv_at: at,
    }
}

fn build(fates: &[(Fate, u64)], end: u64) -> RawLogs {
    let mut logs = RawLogs { ended_at: ms(end), ..Default::default() };
    for (i, &(fate, delay)) in fates.iter().enumerate() {
        let id = MessageId(format!("m{i}"));
        let text = format!("text{i}");
        let sent = ms(100 * i as u64 + 50);
        logs.sent.push(SentEntry { id: id.clone(), text: text.clone(), scheduled: sent, sent_at: sent });
        let at = sent + ms(delay);
        let echo = EchoEntry { id: id.clone(), text: text.clone(), recv_at: at };
        match fate {
            Fate::Echo => logs.echoes.push(echo),
            Fate::Event => logs.events.push(event(&id, &text, at)),
            Fate::Silent => {}
            Fate::Both => {
                logs.echoes.push(echo);
                logs.events.push(event(&id, &text, at));
            }
            Fate::DupEcho => {
                logs.echoes.push(echo.clone());
                logs.echoes.push(echo);
            }
            Fate::DupEvent => {
                logs.events.push(event(&id, &text, at));
                logs.events.push(event(&id, &text, at + ms(1)));
            }
            Fate::Early => logs.echoes.push(EchoEntry { recv_at: sent - ms(10), ..echo }),
        }
    }
    logs
}

/// Direct case analysis per id.
fn oracle(fates: &[(Fate, u64)], end: u64) -> (BTreeMap<String, OutcomeKind>, BTreeSet<String>, BTreeSet<String>) {
    let (mut outcomes, mut conflicts, mut pending) = (BTreeMap::new(), BTreeSet::new(), BTreeSet::new());
    for (i, &(fate, _)) in fates.iter().enumerate() {
        let id = format!("m{i}");
        let sent = 100 * i as u64 + 50;
        match fate {
            Fate::Echo => {
                outcomes.insert(id, OutcomeKind::Passed);
            }
            Fate::Event => {
                outcomes.insert(id, OutcomeKind::Moderated);
            }
            Fate::Silent if end.saturating_sub(sent) >= TIMEOUT.as_millis() as u64 => {
                outcomes.insert(id, OutcomeKind::PreFiltered);
            }
            Fate::Silent => {
                pending.insert(id);
            }
            _ => {
                conflicts.insert(id);
            }
        }
    }
    (outcomes, conflicts, pending)
}

fn case() -> impl Strategy<Value = (Vec<(Fate, u64)>, u64)> {
    proptest::collection::vec((fate(), 0u64..900), 0..30).prop_flat_map(|f| {
        let last = 100 * f.len() as u64 + 50;
        (Just(f), 0..last + 2 * TIMEOUT.as_millis() as u64)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn partition_or_explicit_error((fates, end) in case()) {
        let logs = build(&fates, end);
        let (want, want_conflicts, want_pending) = oracle(&fates, end);
        match reconcile(&logs, TIMEOUT, "r") {
            Err(ReconcileError::Incomplete { pending }) => {
                let got: BTreeSet<String> = pending.into_iter().map(|p| p.0).collect();
                prop_assert_eq!(got, want_pending);
            }
            Ok(rec) => {
                prop_assert!(want_pending.is_empty());
                let got: BTreeMap<String, OutcomeKind> =
                    rec.records.iter().map(|r| (r.id.0.clone(), r.outcome.kind())).collect();
                prop_assert_eq!(got.len(), rec.records.len());
                let conflicts: BTreeSet<String> = rec.conflicts.iter().map(|c| c.id.0.clone()).collect();
                prop_assert_eq!(&got, &want);
                prop_assert_eq!(&conflicts, &want_conflicts);
                prop_assert!(got.keys().all(|k| !conflicts.contains(k)));
                prop_assert_eq!(got.len() + conflicts.len(), fates.len());
                prop_assert!(rec.records.iter().all(|r| r.latency.is_some() == (r.outcome.kind() != OutcomeKind::PreFiltered)));
            }
        }
    }

    #[test]
    fn permutation_stable((fates, end) in case(), seed in any::<u64>()) {
        let logs = build(&fates, end);
        let mut shuffled = logs.clone();
        let rot = |v: usize| if v == 0 { 0 } else { seed as usize % v };
        shuffled.sent.reverse();
        let k = rot(shuffled.echoes.len());
        shuffled.echoes.rotate_left(k);
        shuffled.events.reverse();
        prop_assert_eq!(reconcile(&logs, TIMEOUT, "r"), reconcile(&shuffled, TIMEOUT, "r"));
        prop_assert_eq!(reconcile(&logs, TIMEOUT, "r"), reconcile(&logs, TIMEOUT, "r"));
    }

    #[test]
    fn dropping_entries_never_misclassifies(
        (fates, _end) in case(),
        keep in subsequence((0..60usize).collect::<Vec<_>>(), 0..60),
    ) {
        let end = 100 * fates.len() as u64 + 50 + TIMEOUT.as_millis() as u64;
        let mut logs = build(&fates, end);
        let keep: BTreeSet<usize> = keep.into_iter().collect();
        let mut i = 0;
        logs.echoes.retain(|_| { i += 1; keep.contains(&(i - 1)) });
        let rec = reconcile(&logs, TIMEOUT, "r").unwrap();
        for r in &rec.records {
            let echoed = logs.echoes.iter().any(|e| e.id == r.id);
            let evented = logs.events.iter().any(|e| e.id == r.id);
            let expected = match (echoed, evented) {
                (true, false) => OutcomeKind::Passed,
                (false, true) => OutcomeKind::Moderated,
                (false, false) => OutcomeKind::PreFiltered,
                (true, true) => unreachable!("both streams must be a conflict"),
            };
            prop_assert_eq!(r.outcome.kind(), expected);
        }
    }
}
