use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

fn imlc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imlc"))
        .args(args)
        .env_remove("LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = imlc(args);
    assert!(
        out.status.success(),
        "imlc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Excitation data, two small models and a one-day episode.
struct Pipeline {
    _dir: tempfile::TempDir,
    root: PathBuf,
    episode: PathBuf,
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_owned();
        let data = root.join("data.csv");
        let manifest = root.join("manifest.json");
        ok(&["excite", "--days", "5", "--seed", "3", "--out", s(&data), "--manifest", s(&manifest)]);
        for target in ["fx", "fy"] {
            let out = root.join(format!("{target}.json"));
            ok(&["train", "--data", s(&data), "--target", target, "--epochs", "300", "--out", s(&out)]);
        }
        let episode = root.join("episode.jsonl");
        ok(&[
            "run", "--days", "1", "--fx", s(&root.join("fx.json")), "--fy", s(&root.join("fy.json")),
            "--dr-prob", "1.0", "--seed", "2", "--out", s(&episode), "--no-timing",
        ]);
        Pipeline {
            _dir: dir,
            root,
            episode,
        }
    })
}

#[test]
fn excite_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let msg = ok(&["excite", "--days", "2", "--seed", "9", "--out", s(&a)]);
    assert!(msg.contains("48 rows"), "{msg}");
    ok(&["excite", "--days", "2", "--seed", "9", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a.config.json").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = imlc(&["excite", "--days", "0", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = imlc(&["train", "--data", "/nonexistent/data.csv", "--target", "fx", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.csv"));
    let out = imlc(&["train", "--target", "fz"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_selects_schema_and_reports_mse() {
    let p = pipeline();
    let fx = std::fs::read_to_string(p.root.join("fx.json")).unwrap();
    assert!(fx.contains("zone_temp_tminus1"));
    let fy = std::fs::read_to_string(p.root.join("fy.json")).unwrap();
    assert!(fy.contains("cooling_rate_t"));
}

#[test]
fn run_is_deterministic_and_prints_census() {
    let p = pipeline();
    let again = p.root.join("again.jsonl");
    let stdout = ok(&[
        "run", "--days", "1", "--fx", s(&p.root.join("fx.json")), "--fy", s(&p.root.join("fy.json")),
        "--dr-prob", "1.0", "--seed", "2", "--out", s(&again), "--no-timing",
    ]);
    assert_eq!(std::fs::read(&p.episode).unwrap(), std::fs::read(&again).unwrap());
    assert!(stdout.contains("(total 24)"), "{stdout}");
    assert!(stdout.contains("reference 4.19 s"), "{stdout}");
}

#[test]
fn explain_writes_one_document_per_record() {
    let p = pipeline();
    let docs = tempfile::tempdir().unwrap();
    let stdout = ok(&["explain", "--episode", s(&p.episode), "--t", "all", "--out", s(docs.path())]);
    assert!(stdout.contains("wrote 24 documents"), "{stdout}");
    for t in 0..24 {
        let md = std::fs::read_to_string(docs.path().join(format!("ts_{t}.md"))).unwrap();
        assert!(!md.contains("[placeholder]"));
        assert!(docs.path().join(format!("ts_{t}_attr4.svg")).exists());
    }
}

#[test]
fn explain_llm_mode() {
    let p = pipeline();
    let docs = tempfile::tempdir().unwrap();
    let out = imlc(&["explain", "--episode", s(&p.episode), "--t", "5", "--mode", "llm", "--out", s(docs.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("LLM_API_KEY"));

    let stdout = ok(&[
        "explain", "--episode", s(&p.episode), "--t", "5", "--mode", "llm", "--llm", "stub", "--out",
        s(docs.path()),
    ]);
    assert!(stdout.contains("1/1 (100.0%)"), "{stdout}");
    let md = std::fs::read_to_string(docs.path().join("ts_5.md")).unwrap();
    assert!(md.contains("llm-enhanced"));
}

#[test]
fn ask_answers_and_reports_range() {
    let p = pipeline();
    let answer = ok(&[
        "ask", "--episode", s(&p.episode), "--t", "3", "--llm", "stub", "--question",
        "What will happen if I keep the setpoint to 26°C?",
    ]);
    assert!(answer.contains("P_limit(t+2)"), "{answer}");

    let out = imlc(&["ask", "--episode", s(&p.episode), "--t", "99", "--llm", "stub", "--question", "why?"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0..=23"));
}

#[test]
fn repl_reprompts_on_empty_lines() {
    let p = pipeline();
    let mut child = Command::new(env!("CARGO_BIN_EXE_imlc"))
        .args(["ask", "--episode", s(&p.episode), "--t", "2", "--llm", "stub", "--repl"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"\n\nwhy this setpoint?\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.matches("question> ").count(), 4, "{stdout}");
    assert_eq!(stdout.matches("P_limit(t+1)").count(), 1, "{stdout}");
}

#[test]
fn manifest_lists_existing_outputs() {
    let p = pipeline();
    let text = std::fs::read_to_string(p.root.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let entry = &v["entries"][0];
    assert_eq!(entry["command"], "excite");
    assert_eq!(entry["seeds"]["excitation"], 3);
    for out in entry["outputs"].as_array().unwrap() {
        assert!(Path::new(out.as_str().unwrap()).exists());
    }
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"testbed": {"initial_zone_temp": 23.0}}"#).unwrap();
    let data = dir.path().join("d.csv");
    ok(&["--config", s(&cfg), "excite", "--days", "1", "--out", s(&data)]);
    let saved = std::fs::read_to_string(dir.path().join("d.config.json")).unwrap();
    assert!(saved.contains("23.0"), "{saved}");

    std::fs::write(&cfg, r#"{"testbed": {"thermal_resistance": "high"}}"#).unwrap();
    let out = imlc(&["--config", s(&cfg), "excite", "--days", "1", "--out", s(&data)]);
    assert_eq!(out.status.code(), Some(2));
}
