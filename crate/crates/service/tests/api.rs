use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use quandary::backends::fixture::{Offline, ScriptedGenerator, ScriptedJudge};
use quandary::session::{load_sessions, InteractiveJudge, SessionManager, SessionState};
use quandary_service::api::router;
use serde_json::{json, Value};
use tower::ServiceExt;

fn judge() -> InteractiveJudge {
    let questions = ScriptedGenerator::default()
        .rule("given that", "Did anyone else know?")
        .with_default("Why did you do it?");
    let oracle = ScriptedJudge::new()
        .rule(["emergency"], [0.1, 0.3, 0.6])
        .with_default([0.6, 0.3, 0.1]);
    InteractiveJudge::new(Arc::new(questions), Arc::new(oracle))
}

fn app() -> (Router, Arc<SessionManager>) {
    let m = Arc::new(SessionManager::new(judge()));
    (router(m.clone()), m)
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn create(app: &Router, situation: &str) -> String {
    let (st, body) = send(app, "POST", "/sessions", Some(&json!({ "situation": situation }).to_string())).await;
    assert_eq!(st, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

async fn answer(app: &Router, id: &str, text: &str) -> (StatusCode, Value) {
    send(app, "POST", &format!("/sessions/{id}/answer"), Some(&json!({ "answer": text }).to_string())).await
}

#[tokio::test]
async fn response_shapes() {
    let (app, _) = app();
    let (st, body) = send(&app, "POST", "/sessions", Some(r#"{"situation": "leaving work early"}"#)).await;
    assert_eq!(st, StatusCode::CREATED);
    let keys: Vec<&str> = body.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 3);
    assert_eq!(body["judgment"], json!({"bad": 0.6, "ok": 0.3, "good": 0.1}));
    assert_eq!(body["question"], "Why did you do it?");
    let id = body["session_id"].as_str().unwrap();

    let (st, body) = answer(&app, id, "there was an emergency").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body, json!({"judgment": {"bad": 0.1, "ok": 0.3, "good": 0.6}, "question": "Did anyone else know?", "terminal": false}));

    answer(&app, id, "no").await;
    let (_, body) = answer(&app, id, "no").await;
    assert_eq!(body["terminal"], true);
    assert!(body.get("question").is_none());

    let (st, body) = send(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    let state: SessionState = serde_json::from_value(body.clone()).unwrap();
    assert_eq!(state.turns.len(), 3);
    assert_eq!(body["turns"][0]["fused"]["text"], "leaving work early, given that there was an emergency");
    assert_eq!(body["turns"][0]["fused"]["answer"]["update_type"], "weakener");
}

#[tokio::test]
async fn turn_limit_and_terminal_immutability() {
    let (app, m) = app();
    let id = create(&app, "leaving work early").await;
    for _ in 0..3 {
        assert_eq!(answer(&app, &id, "yes").await.0, StatusCode::OK);
    }
    let before = m.get_session(&id).unwrap();
    let (st, body) = answer(&app, &id, "again").await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("3 turns"));
    assert_eq!(m.get_session(&id).unwrap(), before);
}

#[tokio::test]
async fn client_errors() {
    let (app, _) = app();
    assert_eq!(send(&app, "GET", "/sessions/missing", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(answer(&app, "missing", "x").await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, "POST", "/sessions", Some(r#"{"situation": "   "}"#)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let id = create(&app, "leaving work early").await;
    assert_eq!(answer(&app, &id, " ").await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, _) = send(&app, "POST", "/sessions", Some("not json")).await;
    assert!(st.is_client_error());
    let (st, _) = send(&app, "POST", "/sessions", Some(r#"{"text": "x"}"#)).await;
    assert!(st.is_client_error());
    assert_eq!(send(&app, "GET", "/health", None).await.0, StatusCode::OK);
}

#[tokio::test]
async fn unavailable_backend_is_503() {
    let m = Arc::new(SessionManager::new(InteractiveJudge::new(Arc::new(Offline), Arc::new(Offline))));
    let app = router(m.clone());
    let (st, body) = send(&app, "POST", "/sessions", Some(r#"{"situation": "leaving work early"}"#)).await;
    assert_eq!(st, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body["error"].is_string());
    assert!(m.is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions() {
    let (app, m) = app();
    let mut tasks = Vec::new();
    for i in 0..8 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let id = create(&app, &format!("leaving work early, day {i}")).await;
            for _ in 0..3 {
                assert_eq!(answer(&app, &id, "an emergency").await.0, StatusCode::OK);
            }
            id
        }));
    }
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 8);
    assert_eq!(m.len(), 8);
    for id in ids {
        let s = m.get_session(&id).unwrap();
        assert!(s.terminal && s.check_invariants());
    }
}

#[tokio::test]
async fn completed_sessions_are_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let m = Arc::new(SessionManager::new(judge()).with_persistence(&path));
    let app = router(m.clone());
    let id = create(&app, "leaving work early").await;
    answer(&app, &id, "yes").await;
    assert!(!path.exists());
    answer(&app, &id, "yes").await;
    answer(&app, &id, "yes").await;
    let saved = load_sessions(&path).unwrap();
    assert_eq!(saved, vec![m.get_session(&id).unwrap()]);
    assert!(judge().replay(&saved[0]).unwrap());
}
