use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use dialogctl::service::{Service, ServiceConfig};
use dialogctl_server::router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> (Router, Arc<Service>) {
    let svc = Service::new(ServiceConfig::default()).unwrap();
    (router(Arc::clone(&svc)), svc)
}

async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn json_call(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let (s, text) = call(app, method, uri, body).await;
    (
        s,
        serde_json::from_str(&text).unwrap_or(Value::String(text)),
    )
}

#[tokio::test]
async fn health_and_model() {
    let (app, _) = app();
    assert_eq!(
        call(&app, Method::GET, "/health", None).await,
        (StatusCode::OK, "ok".into())
    );
    let (s, m) = json_call(&app, Method::GET, "/model", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(m["input_dim"], 45);
    assert_eq!(m["actions"].as_array().unwrap().len(), 14);
    assert_eq!(m["version"], 1);
}

#[tokio::test]
async fn chat_flow_and_error_codes() {
    let (app, _) = app();
    let (s, v) = json_call(&app, Method::POST, "/sessions", None).await;
    assert_eq!(s, StatusCode::OK);
    let id = v["id"].as_u64().unwrap();
    let turn = |text: &str| json!({ "text": text });
    let uri = format!("/sessions/{id}/utterances");

    let (_, r) = json_call(&app, Method::POST, &uri, Some(turn(""))).await;
    assert_eq!(r["actions"][0]["text"], "How can I help you?");
    let (_, r) = json_call(
        &app,
        Method::POST,
        &uri,
        Some(turn("Call Jason Williams cellphone")),
    )
    .await;
    assert_eq!(r["actions"][0]["name"], "announce_call");
    let (_, r) = json_call(&app, Method::POST, &uri, Some(turn(""))).await;
    assert_eq!(r["actions"][0]["name"], "PlaceCall");
    assert_eq!(r["closed"], true);

    let (s, e) = json_call(&app, Method::POST, &uri, Some(turn("hi"))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(e["error"].is_string());
    let (s, t) = json_call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/transcript"),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t.as_array().unwrap().len(), 3);

    assert_eq!(
        json_call(
            &app,
            Method::POST,
            "/sessions/999/utterances",
            Some(turn(""))
        )
        .await
        .0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        json_call(&app, Method::GET, "/sessions/999", None).await.0,
        StatusCode::NOT_FOUND
    );
    let (s, _) = json_call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "mode": "sample" })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (_, list) = json_call(&app, Method::GET, "/sessions", None).await;
    assert_eq!(list.as_array().unwrap().len(), 2);
    assert_eq!(
        call(&app, Method::DELETE, &format!("/sessions/{id}"), None)
            .await
            .0,
        StatusCode::NO_CONTENT
    );
    assert_eq!(
        json_call(&app, Method::GET, &format!("/sessions/{id}"), None)
            .await
            .0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn streamed_turn_sends_actions_then_done() {
    let (app, svc) = app();
    let id = svc.create_session(Default::default()).unwrap();
    let (s, body) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/utterances/stream"),
        Some(json!({ "text": "" })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let action = body.find("event: action").unwrap();
    let done = body.find("event: done").unwrap();
    assert!(action < done, "{body}");
    assert!(body.contains("How can I help you?"));
}

#[tokio::test]
async fn corrections_and_queue() {
    let (app, svc) = app();
    let id = svc.create_session(Default::default()).unwrap();
    for text in ["", "hello", "hello"] {
        svc.post_utterance(id, text).unwrap();
    }
    let (_, q) = json_call(&app, Method::GET, "/queue?limit=2", None).await;
    let q = q.as_array().unwrap();
    assert_eq!(q.len(), 2);
    assert!(q[0]["score"].as_f64() <= q[1]["score"].as_f64());

    // An action the mask forbids at that turn is a client error.
    let rec = &svc.transcript(id).unwrap()[0];
    let banned = rec.mask.iter().position(|ok| !ok).unwrap();
    let (s, _) = json_call(
        &app,
        Method::POST,
        "/corrections",
        Some(json!({ "session": id, "turn": 0, "action": banned })),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let goodbye = dialogctl::phone::actions::GOODBYE;
    let (s, r) = json_call(
        &app,
        Method::POST,
        "/corrections",
        Some(json!({ "session": id, "turn": 2, "action": goodbye })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["reconstructed"], true);
    assert_eq!(r["model_version"], 2);
    let (_, text) = call(&app, Method::GET, "/corpus", None).await;
    assert!(text.ends_with("usr hello\nsys goodbye\nend\n"));
}

#[tokio::test]
async fn corpus_replacement() {
    let (app, _) = app();
    let req = Request::builder()
        .method(Method::PUT)
        .uri("/corpus")
        .body(Body::from("sys goodbye\nend\n"))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let two: String = dialogctl::phone::corpus_text()
        .split("\nend\n")
        .take(2)
        .map(|d| format!("{d}\nend\n"))
        .collect();
    let req = Request::builder()
        .method(Method::PUT)
        .uri("/corpus")
        .body(Body::from(two.clone()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let (_, r) = json_call(&app, Method::GET, "/model", None).await;
    assert_eq!(r["version"], 2);
}

#[tokio::test]
async fn checkpoint_round_trip() {
    let (app, _) = app();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let (s, r) = json_call(
        &app,
        Method::POST,
        "/checkpoint/save",
        Some(json!({ "path": path })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert!(path.exists());
    let (s, r) = json_call(
        &app,
        Method::POST,
        "/checkpoint/load",
        Some(json!({ "path": path })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["model_version"], 2);
    let (s, _) = json_call(
        &app,
        Method::POST,
        "/checkpoint/load",
        Some(json!({ "path": dir.path().join("missing") })),
    )
    .await;
    assert!(s.is_client_error() || s.is_server_error());
}

#[tokio::test]
async fn jobs_report_progress_over_sse() {
    let (app, _) = app();
    let (s, r) = json_call(
        &app,
        Method::POST,
        "/jobs",
        Some(json!({ "kind": "loo_eval", "sizes": [1], "seed": 0 })),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = r["id"].as_u64().unwrap();
    let (s, _) = json_call(
        &app,
        Method::POST,
        "/jobs",
        Some(json!({ "kind": "train_sl" })),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, body) = call(&app, Method::GET, &format!("/jobs/{id}/events"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(body.contains("\"event\":\"progress\""), "{body}");
    assert!(body.contains("\"event\":\"finished\""), "{body}");
    let (_, st) = json_call(&app, Method::GET, &format!("/jobs/{id}"), None).await;
    assert_eq!(st["state"], "finished");

    assert_eq!(
        json_call(&app, Method::GET, "/jobs/77", None).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        json_call(&app, Method::POST, "/jobs/77/cancel", None)
            .await
            .0,
        StatusCode::NOT_FOUND
    );
    let (s, _) = call(&app, Method::POST, "/jobs", Some(json!({ "kind": "nope" }))).await;
    assert!(s.is_client_error());
}

#[tokio::test]
async fn cancelled_job_ends_its_stream() {
    let (app, _) = app();
    let (_, r) = json_call(
        &app,
        Method::POST,
        "/jobs",
        Some(json!({ "kind": "loo_eval", "seed": 3 })),
    )
    .await;
    let id = r["id"].as_u64().unwrap();
    assert_eq!(
        call(&app, Method::POST, &format!("/jobs/{id}/cancel"), None)
            .await
            .0,
        StatusCode::ACCEPTED
    );
    let (_, body) = call(&app, Method::GET, &format!("/jobs/{id}/events"), None).await;
    assert!(body.contains("\"event\":\"cancelled\""), "{body}");
}
