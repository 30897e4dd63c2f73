use std::sync::Arc;
use std::time::Duration;

use modaudit_core::mock::{moderate, ChannelState, Lexicon, LexiconEntry, MockService};
use modaudit_core::transport::{
    max_in_window, run_session, LoopbackConnector, PauseMode, RateConfig, SessionConfig, TcpConnector,
};
use modaudit_core::{reconcile, FilterConfig, FilterLevel, Message, ModerationCategory, OutcomeKind};
use rand::{Rng, SeedableRng};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

fn lexicon() -> Arc<Lexicon> {
    Arc::new(
        Lexicon::new([
            LexiconEntry::channel("zorp", ModerationCategory::Racism, 1),
            LexiconEntry::channel("blep mlem", ModerationCategory::Misogyny, 3),
            LexiconEntry::prefilter("qux", ModerationCategory::Racism),
        ])
        .unwrap(),
    )
}

fn state() -> ChannelState {
    ChannelState::new("chan", FilterConfig::all_builtin(FilterLevel::MAX), lexicon())
}

fn corpus() -> Vec<Message> {
    vec![
        Message::new("m1", "hello there"),
        Message::new("m2", "you ZORP"),
        Message::new("m3", "qux qux"),
        Message::new("m4", "a blep, mlem!"),
    ]
}

fn fast_rate() -> RateConfig {
    RateConfig {
        window_limit: 20,
        window: Duration::from_millis(200),
        batch_size: 5,
        intra_gap: Duration::from_millis(20),
        batch_pause: Duration::from_millis(40),
        pause_mode: PauseMode::Additive,
    }
}

#[tokio::test(start_paused = true)]
async fn loopback_session_reconciles_three_ways() {
    let cfg = SessionConfig::default();
    let logs = run_session(&corpus(), &LoopbackConnector::new(state()), "chan", &cfg).await.unwrap();
    assert_eq!(logs.sent.len(), 4);
    assert_eq!(logs.max_jitter(), Duration::ZERO);
    assert!(logs.echoes.iter().all(|e| e.id.as_str() != "m3"));
    assert!(logs.events.iter().all(|e| e.id.as_str() != "m3"));

    let rec = reconcile(&logs, cfg.timeout, "run").unwrap();
    assert!(rec.conflicts.is_empty());
    let kinds: Vec<_> = rec.records.iter().map(|r| (r.id.as_str(), r.outcome.kind())).collect();
    assert_eq!(
        kinds,
        [
            ("m1", OutcomeKind::Passed),
            ("m2", OutcomeKind::Moderated),
            ("m3", OutcomeKind::PreFiltered),
            ("m4", OutcomeKind::Moderated),
        ]
    );
    for (r, m) in rec.records.iter().zip(corpus()) {
        assert_eq!(r.outcome, moderate(&m.text, &state()));
    }
}

#[tokio::test(start_paused = true)]
async fn session_waits_full_timeout_only_for_silence() {
    let cfg = SessionConfig::default();
    let all_echoed = vec![Message::new("a", "fine"), Message::new("b", "also fine")];
    let logs = run_session(&all_echoed, &LoopbackConnector::new(state()), "chan", &cfg).await.unwrap();
    assert!(logs.ended_at < logs.sent[1].sent_at + cfg.timeout);

    let silent = vec![Message::new("a", "qux")];
    let logs = run_session(&silent, &LoopbackConnector::new(state()), "chan", &cfg).await.unwrap();
    assert!(logs.ended_at >= logs.sent[0].sent_at + cfg.timeout);
}

#[tokio::test(start_paused = true)]
async fn text_only_echoes_resolve_in_send_order() {
    let mut conn = LoopbackConnector::new(state());
    conn.text_only_echoes = true;
    let msgs = vec![Message::new("a", "same"), Message::new("b", "same"), Message::new("c", "other")];
    let logs = run_session(&msgs, &conn, "chan", &SessionConfig::default()).await.unwrap();
    let ids: Vec<_> = logs.echoes.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
}

#[tokio::test(start_paused = true)]
async fn duplicate_input_ids_rejected() {
    let msgs = vec![Message::new("a", "x"), Message::new("a", "y")];
    let err = run_session(&msgs, &LoopbackConnector::new(state()), "chan", &SessionConfig::default())
        .await
        .unwrap_err();
    assert!(err.partial.is_empty());
}

#[tokio::test(start_paused = true)]
async fn default_schedule_respects_window_in_virtual_time() {
    let msgs: Vec<_> = (0..45).map(|i| Message::new(format!("m{i}"), "hello")).collect();
    let logs = run_session(&msgs, &LoopbackConnector::new(state()), "chan", &SessionConfig::default())
        .await
        .unwrap();
    let offsets: Vec<f64> = logs.sent.iter().take(6).map(|s| s.sent_at.as_secs_f64()).collect();
    assert_eq!(offsets, [0.0, 4.0, 8.0, 12.0, 16.0, 23.5]);
    assert!(max_in_window(&logs.send_times(), Duration::from_secs(30)) <= 20);
}

#[tokio::test(start_paused = true)]
async fn random_legal_configs_stay_under_limit() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 20 {
        let rc = RateConfig {
            window_limit: rng.gen_range(1..=25),
            window: Duration::from_millis(rng.gen_range(100..=5_000)),
            batch_size: rng.gen_range(1..=8),
            intra_gap: Duration::from_millis(rng.gen_range(1..=800)),
            batch_pause: Duration::from_millis(rng.gen_range(1..=800)),
            pause_mode: if rng.gen() { PauseMode::Additive } else { PauseMode::Replace },
        };
        if rc.validate().is_err() {
            continue;
        }
        let n = rng.gen_range(1..=40);
        let msgs: Vec<_> = (0..n).map(|i| Message::new(format!("m{i}"), "hi")).collect();
        let cfg = SessionConfig { rate: rc.clone(), ..SessionConfig::default() };
        let logs = run_session(&msgs, &LoopbackConnector::new(state()), "chan", &cfg).await.unwrap();
        assert!(max_in_window(&logs.send_times(), rc.window) <= rc.window_limit as usize, "{rc:?}");
        checked += 1;
    }
}

#[tokio::test]
async fn tcp_session_against_mock_service() {
    let (addr, _server) = MockService::new([state()]).spawn("127.0.0.1:0").await.unwrap();
    let connector = TcpConnector::new(addr.to_string());
    let cfg = SessionConfig { rate: fast_rate(), timeout: Duration::from_millis(400), jitter_bound: Duration::from_millis(250) };
    let logs = run_session(&corpus(), &connector, "chan", &cfg).await.unwrap();
    let rec = reconcile(&logs, cfg.timeout, "run").unwrap();
    let kinds: Vec<_> = rec.records.iter().map(|r| r.outcome.kind()).collect();
    assert_eq!(kinds, [OutcomeKind::Passed, OutcomeKind::Moderated, OutcomeKind::PreFiltered, OutcomeKind::Moderated]);
    let ev = logs.events.iter().find(|e| e.id.as_str() == "m4").unwrap();
    assert_eq!(ev.topics, ["Misogyny"]);
    assert_eq!(ev.level.get(), 3);
    assert_eq!(ev.fragments[0].text, "blep, mlem");
}

#[tokio::test]
async fn tcp_configure_changes_moderation() {
    let (addr, _server) = MockService::new([state()]).spawn("127.0.0.1:0").await.unwrap();
    let connector = TcpConnector::new(addr.to_string());
    connector.configure("chan", &FilterConfig::all_builtin(FilterLevel::new(2).unwrap())).await.unwrap();
    let cfg = SessionConfig { rate: fast_rate(), timeout: Duration::from_millis(400), jitter_bound: Duration::from_millis(250) };
    let logs = run_session(&corpus()[3..], &connector, "chan", &cfg).await.unwrap();
    let rec = reconcile(&logs, cfg.timeout, "run").unwrap();
    assert_eq!(rec.records[0].outcome.kind(), OutcomeKind::Passed);
}

#[tokio::test]
async fn tcp_unknown_channel_fails_to_connect() {
    let (addr, _server) = MockService::new([state()]).spawn("127.0.0.1:0").await.unwrap();
    let err = run_session(&corpus(), &TcpConnector::new(addr.to_string()), "nope", &SessionConfig::default())
        .await
        .unwrap_err();
    assert!(err.partial.sent.is_empty());
}

async fn read_json(lines: &mut tokio::io::Lines<BufReader<tokio::net::tcp::OwnedReadHalf>>) -> serde_json::Value {
    let line = tokio::time::timeout(Duration::from_secs(2), lines.next_line()).await.unwrap().unwrap().unwrap();
    serde_json::from_str(&line).unwrap()
}

#[tokio::test]
async fn raw_wire_frames() {
    let (addr, _server) = MockService::new([state()]).spawn("127.0.0.1:0").await.unwrap();
    let (rd, mut wr) = TcpStream::connect(addr).await.unwrap().into_split();
    let mut lines = BufReader::new(rd).lines();
    wr.write_all(b"{\"type\":\"subscribe\",\"channel\":\"chan\",\"stream\":\"automod\"}\n").await.unwrap();
    assert_eq!(read_json(&mut lines).await["type"], "subscribed");
    wr.write_all(b"{\"type\":\"send\",\"channel\":\"chan\",\"id\":\"x1\",\"text\":\"zorp\"}\n").await.unwrap();
    let ev = read_json(&mut lines).await;
    assert_eq!(ev["type"], "automod_event");
    assert_eq!(ev["id"], "x1");
    assert_eq!(ev["category"], "racism");
    assert_eq!(ev["fragments"][0]["text"], "zorp");
    wr.write_all(b"not json\n").await.unwrap();
    assert_eq!(read_json(&mut lines).await["type"], "error");
    wr.write_all(b"{\"type\":\"send\",\"channel\":\"chan\",\"id\":\"x2\",\"text\":\"\"}\n").await.unwrap();
    assert_eq!(read_json(&mut lines).await["type"], "error");
}
