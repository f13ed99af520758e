mod common;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use slicelens::demo::DemoOptions;
use slicelens::server::api::{router, AppState};
use slicelens::server::ProjectConfig;

const MODELS: [&str; 3] = ["m1", "m2", "m3"];
// correct predictions per 10 rows, by model
const CORRECT: [usize; 3] = [9, 8, 6];

struct Row {
    transcript: String,
    amplitude: f64,
    preds: Vec<String>,
}

fn preset(n: usize, transcripts: &[String]) -> Vec<(String, Vec<String>)> {
    MODELS
        .iter()
        .zip(CORRECT)
        .map(|(m, c)| {
            let preds = (0..n).map(|i| if i % 10 < c { transcripts[i].clone() } else { "wrong".to_string() }).collect();
            (m.to_string(), preds)
        })
        .collect()
}

/// Builds a project whose model outputs are fixed, so metrics can be computed
/// by hand from the files on disk.
fn fixed_project(dir: &Path, n: usize, extra: &[&str]) -> (ProjectConfig, Vec<Row>) {
    // first pass only to learn the generated transcripts
    let probe = tempfile::tempdir().unwrap();
    let base = DemoOptions { instances: n, models: MODELS.iter().map(|s| s.to_string()).collect(), ..Default::default() };
    common::demo_project(probe.path(), base.clone());
    let transcripts: Vec<String> = read_csv(&probe.path().join("metadata.csv")).into_iter().map(|r| r["transcript"].clone()).collect();
    let options = DemoOptions {
        preset_predictions: preset(n, &transcripts),
        plugin_args: extra.iter().map(|s| s.to_string()).collect(),
        ..base
    };
    let project = common::demo_project(dir, options);
    let rows = read_csv(&project.metadata)
        .into_iter()
        .map(|r| {
            let data = std::fs::read_to_string(project.data_root.join(&r["file"])).unwrap();
            let amplitude = data.lines().find_map(|l| l.strip_prefix("amplitude ")).unwrap().parse().unwrap();
            Row { transcript: r["transcript"].clone(), amplitude, preds: MODELS.iter().map(|m| r[&format!("pred_{m}")].clone()).collect() }
        })
        .collect();
    (ProjectConfig::load(&project.config).unwrap(), rows)
}

fn read_csv(path: &Path) -> Vec<HashMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    reader.records().map(|r| headers.iter().zip(r.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()).collect()
}

fn ready_app(config: ProjectConfig) -> (Arc<AppState>, Router) {
    let state = AppState::new(config).unwrap();
    state.start_processing().join().unwrap();
    let app = router(Arc::clone(&state));
    (state, app)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = raw(app, method, uri, body, None).await;
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

async fn raw(app: &Router, method: &str, uri: &str, body: Option<Value>, range: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(r) = range {
        req = req.header(header::RANGE, r);
    }
    let req = match body {
        Some(b) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

fn in_slice(r: &Row) -> bool {
    0.04 < r.amplitude && r.amplitude < 0.12
}

fn hand_accuracy(rows: &[Row], model: usize) -> (f64, usize) {
    let sel: Vec<&Row> = rows.iter().filter(|r| in_slice(r)).collect();
    let hits = sel.iter().filter(|r| r.preds[model] == r.transcript).count();
    (hits as f64 / sel.len() as f64, sel.len())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn returns_503_with_progress_until_processed() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = fixed_project(dir.path(), 20, &["--sleep-ms", "300"]);
    let state = AppState::new(config).unwrap();
    let app = router(Arc::clone(&state));
    let handle = state.start_processing();
    let (status, body) = call(&app, "GET", "/api/v1/histograms", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "processing");
    assert!(body["error"]["progress"]["total"].is_u64());
    let (status, health) = call(&app, "GET", "/api/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["state"], "processing");
    tokio::task::spawn_blocking(move || handle.join().unwrap()).await.unwrap();
    let (status, _) = call(&app, "GET", "/api/v1/histograms", None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, health) = call(&app, "GET", "/api/v1/health", None).await;
    assert_eq!(health["state"], "ready");
    let p = &health["progress"];
    assert_eq!(p["settled"], p["total"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slice_lifecycle_series_and_tests() {
    let dir = tempfile::tempdir().unwrap();
    let (config, rows) = fixed_project(dir.path(), 120, &[]);
    let (_state, app) = ready_app(config);

    let (status, slice) =
        call(&app, "POST", "/api/v1/slices", Some(json!({"name": "quiet", "predicate": "0.04 < amplitude < 0.12"}))).await;
    assert_eq!(status, StatusCode::CREATED, "{slice}");
    let id = slice["slice_id"].as_str().unwrap().to_string();

    let (status, err) =
        call(&app, "POST", "/api/v1/slices", Some(json!({"name": "quiet", "predicate": "amplitude > 0.1"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"]["code"], "conflict");

    let (status, err) =
        call(&app, "POST", "/api/v1/slices", Some(json!({"name": "broken", "predicate": "amplitude > > 3"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"]["code"], "invalid_predicate");
    assert!(err["error"]["position"].is_u64(), "{err}");

    let (status, err) =
        call(&app, "POST", "/api/v1/slices", Some(json!({"name": "ghost", "predicate": "no_such_column > 1"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");

    // series: one point per model, values equal to the hand count
    let (status, series) = call(&app, "GET", &format!("/api/v1/series?slice={id}&metric=accuracy"), None).await;
    assert_eq!(status, StatusCode::OK, "{series}");
    let points = series["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    for (k, p) in points.iter().enumerate() {
        let (acc, n) = hand_accuracy(&rows, k);
        assert!((p["value"].as_f64().unwrap() - acc).abs() < 1e-12, "model {k}: {p} vs {acc}");
        assert_eq!(p["n"].as_u64().unwrap() as usize, n);
    }
    assert!(series["fit"]["slope"].as_f64().unwrap() < 0.0);
    assert_eq!(series["flag"], "downward");

    // the plugin metric agrees with the built-in one here
    let (_, em) = call(&app, "GET", &format!("/api/v1/series?slice={id}&metric=exact_match"), None).await;
    for (a, b) in em["points"].as_array().unwrap().iter().zip(points) {
        assert!((a["value"].as_f64().unwrap() - b["value"].as_f64().unwrap()).abs() < 1e-12);
    }

    // a test at a threshold between m2 and m3 fails only on the latest model
    let (a2, _) = hand_accuracy(&rows, 1);
    let (a3, _) = hand_accuracy(&rows, 2);
    let threshold = (a2 + a3) / 2.0;
    let (status, test) = call(
        &app,
        "POST",
        "/api/v1/tests",
        Some(json!({"slice_id": id, "metric_id": "accuracy", "comparator": ">", "threshold": threshold})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{test}");
    let (status, results) = call(&app, "GET", "/api/v1/testresults", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(results["latest_model"], "m3");
    assert_eq!(results["failures_latest"], 1);
    let verdicts: Vec<&str> =
        results["results"][0]["verdicts"].as_array().unwrap().iter().map(|v| v["verdict"].as_str().unwrap()).collect();
    assert_eq!(verdicts, ["pass", "pass", "fail"]);

    let (status, _) = call(
        &app,
        "POST",
        "/api/v1/tests",
        Some(json!({"slice_id": id, "metric_id": "nope", "comparator": ">", "threshold": 0.5})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // report export in three formats
    let (status, report) = call(
        &app,
        "POST",
        "/api/v1/reports",
        Some(json!({"name": "Weekly check", "entries": [
            {"slice_id": id, "metric_id": "accuracy"},
            {"slice_id": id, "metric_id": "accuracy", "transform_id": "white_noise"}
        ]})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{report}");
    let rid = report["report_id"].as_str().unwrap();
    let (status, html) = raw(&app, "GET", &format!("/api/v1/export/{rid}?format=html"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    let html = String::from_utf8(html).unwrap();
    assert!(html.contains(&format!("{a3}")), "exact value missing from html");
    let (status, md) = raw(&app, "GET", "/api/v1/export/Weekly%20check?format=md", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(md).unwrap().contains("quiet"));
    let (status, doc) = call(&app, "GET", &format!("/api/v1/export/{rid}?format=json"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["entries"].as_array().unwrap().len(), 2);
    let (status, _) = raw(&app, "GET", &format!("/api/v1/export/{rid}?format=pdf"), None, None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // deleting the slice takes its tests and report entries with it
    let (status, _) = call(&app, "DELETE", &format!("/api/v1/slices/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (_, tests) = call(&app, "GET", "/api/v1/tests", None).await;
    assert!(tests.as_array().unwrap().is_empty());
    let (_, report) = call(&app, "GET", &format!("/api/v1/reports/{rid}"), None).await;
    assert!(report["entries"].as_array().unwrap().is_empty());
    let (status, _) = call(&app, "GET", &format!("/api/v1/slices/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cross_filter_endpoints_match_hand_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (config, rows) = fixed_project(dir.path(), 120, &[]);
    let (state, app) = ready_app(config);

    let (_, schema) = call(&app, "GET", "/api/v1/schema", None).await;
    assert_eq!(schema["total_rows"], 120);
    assert_eq!(schema["transforms"], json!(["none", "white_noise"]));

    let selection = json!({"selections": {"distill::amplitude": {"kind": "range", "min": 0.04, "max": 0.12}}, "model_id": "m3"});
    let (status, page) = call(&app, "POST", "/api/v1/instances", Some(json!({"state": selection, "limit": 500}))).await;
    assert_eq!(status, StatusCode::OK, "{page}");
    let expected = rows.iter().filter(|r| in_slice(r)).count();
    assert_eq!(page["total"].as_u64().unwrap() as usize, expected);
    assert_eq!(page["instances"].as_array().unwrap().len(), expected);

    let (status, err) = call(&app, "POST", "/api/v1/instances", Some(json!({"limit": 501}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"]["code"], "limit_too_large");

    let (status, record) = call(&app, "POST", "/api/v1/metric", Some(json!({"state": selection}))).await;
    assert_eq!(status, StatusCode::OK, "{record}");
    let (acc, n) = hand_accuracy(&rows, 2);
    assert!((record["value"].as_f64().unwrap() - acc).abs() < 1e-12);
    assert_eq!(record["n"].as_u64().unwrap() as usize, n);

    // the API answers the same as the engine it wraps
    let slicelens::server::api::Phase::Ready(processed) = state.phase() else { panic!("not ready") };
    let cf: slicelens::query::CrossFilterState = serde_json::from_value(selection.clone()).unwrap();
    let direct = serde_json::to_value(processed.engine.histograms(&cf).unwrap()).unwrap();
    let (_, via_api) = call(&app, "POST", "/api/v1/histograms", Some(selection)).await;
    assert_eq!(direct, via_api);

    let (status, err) = call(&app, "POST", "/api/v1/histograms", Some(json!({"transform_id": "reverb"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"]["code"], "unknown_transform");

    // data files are served with range support
    let (status, bytes) = raw(&app, "GET", "/api/v1/data/clip00000.txt", None, Some("bytes=0-8")).await;
    assert_eq!(status, StatusCode::PARTIAL_CONTENT);
    assert_eq!(bytes, b"amplitude");
    let (status, body) = call(&app, "GET", "/api/v1/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn saved_objects_survive_restart_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = fixed_project(dir.path(), 30, &[]);
    let (_, app) = ready_app(config.clone());
    let (_, slice) = call(
        &app,
        "POST",
        "/api/v1/slices",
        Some(json!({"name": "women", "predicate": "gender == \"female\"", "folder": "demographics"})),
    )
    .await;
    let id = slice["slice_id"].as_str().unwrap();
    call(&app, "POST", "/api/v1/tests", Some(json!({"slice_id": id, "metric_id": "accuracy", "comparator": ">=", "threshold": 0.5})))
        .await;
    call(&app, "POST", "/api/v1/reports", Some(json!({"name": "r", "entries": [
        {"slice_id": id, "metric_id": "accuracy", "test": {"comparator": "<", "threshold": 0.99}}]})))
    .await;
    let files = ["slices.json", "folders.json", "reports.json", "tests.json"];
    let snapshot: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
    let listings = |app: Router| async move {
        let mut out = Vec::new();
        for uri in ["/api/v1/slices", "/api/v1/folders", "/api/v1/reports", "/api/v1/tests"] {
            out.push(call(&app, "GET", uri, None).await.1);
        }
        out
    };
    let before = listings(app.clone()).await;

    let (_, restarted) = ready_app(config);
    assert_eq!(listings(restarted.clone()).await, before);
    // rewrite folders.json through a create/delete pair
    call(&restarted, "POST", "/api/v1/folders", Some(json!({"name": "tmp"}))).await;
    let (status, _) = call(&restarted, "DELETE", "/api/v1/folders/tmp", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&restarted, "DELETE", "/api/v1/folders/demographics", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    for (f, bytes) in files.iter().zip(&snapshot) {
        assert_eq!(&std::fs::read(dir.path().join(f)).unwrap(), bytes, "{f} changed");
    }
}
