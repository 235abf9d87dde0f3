use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use segtune_core::maskdata::LabelMask;
use segtune_service::{router, ServiceConfig, TuningService};

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn write_inputs(dir: &Path) -> (String, String) {
    let m = LabelMask::new(4, 3, vec![0, 1, 1, 0, 0, 1, 0, 0, 2, 2, 0, 0]).unwrap();
    let (img, truth) = (dir.join("img.pgm"), dir.join("truth.pgm"));
    m.save(&img).unwrap();
    m.save(&truth).unwrap();
    (img.display().to_string(), truth.display().to_string())
}

/// Each evaluation copies the input after a short sleep, so a task stays
/// visibly running for a while.
fn slow_request(dir: &Path, budget: usize) -> Value {
    let (img, truth) = write_inputs(dir);
    json!({
        "space": {"dims": [{"name": "a", "type": "range", "lo": 0, "hi": 9, "step": 1}]},
        "workflow": {"kind": "external-command", "command": "sh -c 'sleep 0.03; cp \"$2\" \"$3\"' x {a} {input} {output}"},
        "inputs": [img],
        "truths": [truth],
        "weights": "1,0",
        "algorithm": "ga",
        "budget": budget,
        "seed": 4
    })
}

async fn wait_done(app: &Router, id: &str) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (code, body) = call(app, Method::GET, &format!("/tasks/{id}"), None).await;
        assert_eq!(code, StatusCode::OK);
        let s = body["status"].as_str().unwrap().to_string();
        if seen.last() != Some(&s) {
            seen.push(s.clone());
        }
        if s == "done" || s == "failed" {
            return seen;
        }
        assert!(Instant::now() < deadline, "task {id} did not finish: {seen:?}");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn submit_poll_result_and_restart() {
    let state = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let svc = TuningService::start(ServiceConfig::new(state.path())).unwrap();
    let app = router(svc.clone());

    let (code, first) = call(&app, Method::POST, "/tasks", Some(slow_request(data.path(), 4))).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let (code, second) = call(&app, Method::POST, "/tasks", Some(slow_request(data.path(), 4))).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    assert_eq!(second["status"], "queued");
    let (a, b) = (first["id"].as_str().unwrap().to_string(), second["id"].as_str().unwrap().to_string());
    assert_eq!(b.len(), 32);

    let (code, early) = call(&app, Method::GET, &format!("/tasks/{b}"), None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(early["progress"], json!({"executed": 0, "budget": 4}));
    let (code, _) = call(&app, Method::GET, &format!("/tasks/{b}/result"), None).await;
    assert_eq!(code, StatusCode::CONFLICT);

    // one task runs at a time, so b waits behind a
    let seen = wait_done(&app, &b).await;
    assert_eq!(seen, ["queued", "running", "done"]);

    let (_, sa) = call(&app, Method::GET, &format!("/tasks/{a}"), None).await;
    assert_eq!(sa["status"], "done");
    let (_, sb) = call(&app, Method::GET, &format!("/tasks/{b}"), None).await;
    assert!(sa["started_at"].as_str().unwrap() < sb["started_at"].as_str().unwrap());

    let (code, result) = call(&app, Method::GET, &format!("/tasks/{b}/result"), None).await;
    assert_eq!(code, StatusCode::OK);
    let executed = result["executed"].as_u64().unwrap();
    assert!(executed <= 4);
    assert_eq!(result["history"].as_array().unwrap().len() as u64, executed);
    assert_eq!(sb["best_so_far"], result["best"]);
    assert_eq!(result["best"]["quality"], json!(1.0));

    svc.shutdown();
    drop(app);
    let svc2 = TuningService::start(ServiceConfig::new(state.path())).unwrap();
    let app2 = router(svc2.clone());
    let (code, again) = call(&app2, Method::GET, &format!("/tasks/{b}/result"), None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(again, result);
    svc2.shutdown();
}

#[tokio::test]
async fn rejects_bad_requests() {
    let state = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let svc = TuningService::start(ServiceConfig::new(state.path())).unwrap();
    let app = router(svc.clone());

    let mut bad = slow_request(data.path(), 3);
    bad["weights"] = json!([0.7, 0.5]);
    let (code, body) = call(&app, Method::POST, "/tasks", Some(bad)).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(body["fields"][0]["field"], "weights");

    let (code, _) = call(&app, Method::POST, "/tasks", None).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);

    let mut missing = slow_request(data.path(), 3);
    missing["inputs"] = json!([data.path().join("nope.pgm")]);
    let (code, body) = call(&app, Method::POST, "/tasks", Some(missing)).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["fields"][0]["field"], "inputs[0]");

    let unknown = "0123456789abcdef0123456789abcdef";
    for uri in [format!("/tasks/{unknown}"), format!("/tasks/{unknown}/result"), "/tasks/not-an-id".into()] {
        assert_eq!(call(&app, Method::GET, &uri, None).await.0, StatusCode::NOT_FOUND);
    }
    assert_eq!(call(&app, Method::DELETE, &format!("/tasks/{unknown}"), None).await.0, StatusCode::NOT_FOUND);
    // listing ids is admin-only
    assert_eq!(call(&app, Method::GET, "/tasks", None).await.0, StatusCode::NOT_FOUND);
    let (code, health) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!((code, health["status"].clone()), (StatusCode::OK, json!("ok")));
    tokio::task::spawn_blocking(move || svc.shutdown()).await.unwrap();
}

#[tokio::test]
async fn admin_listing_and_delete() {
    let state = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let svc = TuningService::start(ServiceConfig { admin_list: true, ..ServiceConfig::new(state.path()) }).unwrap();
    let app = router(svc.clone());
    let (_, t) = call(&app, Method::POST, "/tasks", Some(slow_request(data.path(), 2))).await;
    let id = t["id"].as_str().unwrap().to_string();
    let (code, list) = call(&app, Method::GET, "/tasks", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(list[0]["id"], id.as_str());
    wait_done(&app, &id).await;
    assert_eq!(call(&app, Method::DELETE, &format!("/tasks/{id}"), None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, Method::GET, &format!("/tasks/{id}"), None).await.0, StatusCode::NOT_FOUND);
    tokio::task::spawn_blocking(move || svc.shutdown()).await.unwrap();
}
