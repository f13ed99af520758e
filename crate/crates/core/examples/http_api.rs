//! Drive the HTTP API in-process. Pass `--serve` to keep listening on
//! 127.0.0.1:8000 afterwards.

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use serde_json::json;
use slicelens::demo::{self, DemoOptions};
use slicelens::server::{router, AppState, ProjectConfig};
use tower::ServiceExt;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let project = demo::create(dir.path(), &DemoOptions { instances: 300, ..Default::default() })?;
    let state = AppState::new(ProjectConfig::load(&project.config)?)?;
    let app = router(Arc::clone(&state));

    let worker = state.start_processing();
    let send = |method: &str, uri: &str, body: Option<serde_json::Value>| {
        let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
        let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
        let app = app.clone();
        async move {
            let resp = app.oneshot(req).await.unwrap();
            let status = resp.status();
            let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
            (status, String::from_utf8_lossy(&bytes).into_owned())
        }
    };
    let (status, body) = send("GET", "/api/v1/histograms", None).await;
    println!("while processing: {status} {body}");
    tokio::task::spawn_blocking(move || worker.join()).await?.ok();

    let (status, slice) = send("POST", "/api/v1/slices", Some(json!({"name": "quiet", "predicate": "0.04 < amplitude < 0.12"}))).await;
    println!("create slice: {status} {slice}");
    let id = serde_json::from_str::<serde_json::Value>(&slice)?["slice_id"].as_str().unwrap_or_default().to_string();
    let (_, series) = send("GET", &format!("/api/v1/series?slice={id}&metric=accuracy"), None).await;
    println!("series: {series}");
    let (status, err) = send("POST", "/api/v1/slices", Some(json!({"name": "oops", "predicate": "amplitude <"}))).await;
    println!("bad predicate: {status} {err}");
    send("POST", "/api/v1/tests", Some(json!({"slice_id": id, "metric_id": "accuracy", "comparator": ">", "threshold": 0.7}))).await;
    let (_, results) = send("GET", "/api/v1/testresults", None).await;
    println!("test results: {results}");

    if std::env::args().any(|a| a == "--serve") {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:8000").await?;
        println!("listening on http://127.0.0.1:8000/api/v1");
        axum::serve(listener, app).await?;
    }
    Ok(())
}
