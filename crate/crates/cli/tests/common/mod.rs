#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modaudit_core::OutcomeRecord;
use serde_json::{json, Value};

pub fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}

/// Legal pacing that keeps real-socket runs short.
pub fn fast_rate() -> Value {
    json!({"window_limit": 20, "window": 0.2, "batch_size": 5, "intra_gap": 0.02, "batch_pause": 0.04})
}

/// Write a run config over the toy data into `dir`, with `extra` keys merged on top.
pub fn toy_config(dir: &Path, run_id: &str, extra: Value) -> PathBuf {
    let t = toy();
    let mut cfg = json!({
        "run_id": run_id,
        "corpora": [{"name": "toy", "path": t.join("corpus.jsonl"), "mapping": "builtin:dynahate"}],
        "endpoint": {"target": "loopback", "lexicon": t.join("lexicon.jsonl"), "channel": "audit"},
        "probes": {
            "slur_map": t.join("slurmap.json"),
            "fragments": t.join("fragments.txt"),
            "template": "you {fragment}",
            "probe_sets": [t.join("probes.jsonl")]
        },
        "out_dir": dir.join("runs")
    });
    if let Value::Object(extra) = extra {
        for (k, v) in extra {
            cfg[k] = v;
        }
    }
    let path = dir.join(format!("{run_id}.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn modaudit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modaudit"))
}

pub fn run_recipe(config: &Path, recipe: &str, extra: &[&str]) -> Output {
    modaudit().args(["run", "--recipe", recipe, "--config"]).arg(config).args(extra).output().unwrap()
}

pub fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn records(run_dir: &Path) -> Vec<OutcomeRecord> {
    let raw = std::fs::read_to_string(run_dir.join("records.jsonl")).unwrap();
    raw.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// Records with timing removed, sorted by (run id, message id), one JSON line each.
pub fn comparison_view(records: &[OutcomeRecord]) -> Vec<String> {
    let mut rows: Vec<String> = records
        .iter()
        .map(|r| serde_json::to_string(&OutcomeRecord { latency: None, ..r.clone() }).unwrap())
        .collect();
    rows.sort();
    rows
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}
