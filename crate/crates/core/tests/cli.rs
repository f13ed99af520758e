mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use slicelens::demo::DemoOptions;
use slicelens::model::objects::{BehavioralTest, Comparator, Report, ReportEntry, Slice};
use slicelens::model::predicate::FilterPredicate;
use slicelens::server::Store;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slicelens"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// 100 instances; the only model gets exactly `correct` of them right.
fn project_with_accuracy(dir: &Path, correct: usize) {
    let probe = tempfile::tempdir().unwrap();
    let base = DemoOptions { instances: 100, models: vec!["m1".into()], transforms: vec![], ..Default::default() };
    let p = common::demo_project(probe.path(), base.clone());
    let mut reader = csv::Reader::from_path(&p.metadata).unwrap();
    let col = reader.headers().unwrap().iter().position(|h| h == "transcript").unwrap();
    let preds: Vec<String> = reader
        .records()
        .enumerate()
        .map(|(i, r)| if i < correct { r.unwrap()[col].to_string() } else { "wrong".to_string() })
        .collect();
    common::demo_project(dir, DemoOptions { preset_predictions: vec![("m1".into(), preds)], ..base });
    let mut store = Store::open(dir).unwrap();
    let slice = store.create_slice(Slice::new("everything", FilterPredicate::All, None)).unwrap();
    store
        .create_test(BehavioralTest::new(&slice.slice_id, "accuracy", None, Comparator::Gt, 0.70))
        .unwrap();
    let mut report = Report::new("Nightly");
    report.entries.push(ReportEntry { slice_id: slice.slice_id.clone(), metric_id: "accuracy".into(), transform_id: None, test: None });
    store.create_report(report).unwrap();
}

#[test]
fn test_command_exit_code_follows_latest_model() {
    let failing = tempfile::tempdir().unwrap();
    project_with_accuracy(failing.path(), 68);
    let out = run(failing.path(), &["test"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("0.6800"), "{text}");
    assert!(text.contains("1 of 1 tests failing on m1"), "{text}");

    let passing = tempfile::tempdir().unwrap();
    project_with_accuracy(passing.path(), 72);
    let out = run(passing.path(), &["test"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("0 of 1 tests failing on m1"));
}

#[test]
fn second_process_is_served_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::demo_project(dir.path(), DemoOptions { instances: 40, ..Default::default() });
    let config = p.config.display().to_string();
    let first = bin().args(["-c", &config, "process"]).output().unwrap();
    assert_eq!(first.status.code(), Some(0));
    let line = stdout(&first);
    assert!(line.contains("(cache: 0 hit)"), "{line}");
    let executed: usize = line.split_whitespace().next().unwrap().parse().unwrap();
    assert!(executed > 0);
    let second = bin().args(["-c", &config, "process"]).output().unwrap();
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(stdout(&second).trim(), format!("0 tasks executed (cache: {executed} hit)"));
}

#[test]
fn failing_model_gives_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    common::demo_project(
        dir.path(),
        DemoOptions { instances: 20, plugin_args: vec!["--fail-model".into(), "m2".into()], ..Default::default() },
    );
    let out = run(dir.path(), &["process"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("failed"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m2 failed to load weights"));
}

#[test]
fn usage_and_config_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(64));
    assert_eq!(run(dir.path(), &["process"]).status.code(), Some(64), "missing config");
    std::fs::write(dir.path().join("slicelens.toml"), "data_root = \"data\"\n").unwrap();
    let out = run(dir.path(), &["process"]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("metadata"));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn export_report_writes_html_and_markdown() {
    let dir = tempfile::tempdir().unwrap();
    project_with_accuracy(dir.path(), 68);
    let out = run(dir.path(), &["export-report", "Nightly", "-o", "out"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let html = std::fs::read_to_string(dir.path().join("out/Nightly.html")).unwrap();
    assert!(html.contains("0.68"));
    let md = std::fs::read_to_string(dir.path().join("out/Nightly.md")).unwrap();
    assert!(md.contains("everything"));
    assert_eq!(run(dir.path(), &["export-report", "Missing"]).status.code(), Some(64));
}

#[test]
fn serve_listens_on_requested_port() {
    let dir = tempfile::tempdir().unwrap();
    common::demo_project(dir.path(), DemoOptions { instances: 10, ..Default::default() });
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = bin()
        .current_dir(dir.path())
        .args(["serve", "--port", &port.to_string()])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    assert_eq!(line.trim(), format!("listening on http://127.0.0.1:{port}/api/v1"));
    let mut stream = std::net::TcpStream::connect(("127.0.0.1", port)).unwrap();
    use std::io::{Read, Write};
    stream.write_all(b"GET /api/v1/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    let _ = child.wait();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"status\":\"ok\""));
}
