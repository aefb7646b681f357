use std::net::SocketAddr;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use quandary::backends::remote::*;
use quandary::backends::{self, BackendError, DecodingParams, Generation, GenerationRequest, NliLabel, TextGenerator};
use quandary::defeasibility::RewardEngine;
use quandary::{Question, Situation, UpdateType};

async fn generate(Json(req): Json<GenerationRequest>) -> Json<Generation> {
    let text = if let Some(rest) = req.prompt.split(", TYPE: ").nth(1) {
        match rest.starts_with(UpdateType::Weakener.label()) {
            true => "it was an accident".to_string(),
            false => "I did it on purpose".to_string(),
        }
    } else {
        format!("Why {}? (seed {})", req.prompt, req.params.seed.unwrap_or(0))
    };
    Json(Generation { text, truncated: false })
}

async fn judge(Json(req): Json<JudgeRequest>) -> Json<JudgeResponse> {
    // Unnormalized on purpose.
    Json(if req.text.contains("accident") {
        JudgeResponse { bad: 1.0, ok: 1.0, good: 2.0 }
    } else {
        JudgeResponse { bad: 3.0, ok: 1.0, good: 0.0 }
    })
}

async fn nli(Json(req): Json<NliRequest>) -> Json<NliResponse> {
    let label = if req.hypothesis.contains("never") { NliLabel::Contradiction } else { NliLabel::Neutral };
    Json(NliResponse { label })
}

async fn qa(Json(req): Json<QaRequest>) -> Json<QaResponse> {
    Json(QaResponse {
        answerable: req.context.contains(req.question.trim_end_matches('?')),
    })
}

async fn similarity(Json(req): Json<SimilarityRequest>) -> Json<SimilarityResponse> {
    Json(SimilarityResponse {
        score: if req.candidate == req.reference { 1.0 } else { 0.25 },
    })
}

async fn relevance(Json(_): Json<RelevanceRequest>) -> Json<RelevanceResponse> {
    Json(RelevanceResponse { probability: 0.75 })
}

fn mock() -> Router {
    Router::new()
        .route("/generate", post(generate))
        .route("/judge", post(judge))
        .route("/nli", post(nli))
        .route("/qa", post(qa))
        .route("/similarity", post(similarity))
        .route("/relevance", post(relevance))
        .route("/broken/judge", post(|| async { (StatusCode::INTERNAL_SERVER_ERROR, "boom") }))
        .route("/garbled/judge", post(|| async { "{\"bad\": \"x\"}" }))
}

/// Serves `router` on an ephemeral port from a background thread.
fn spawn(router: Router) -> SocketAddr {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    rx.recv_timeout(Duration::from_secs(10)).unwrap()
}

#[test]
fn every_endpoint_round_trips() {
    let addr = spawn(mock());
    let r = RemoteBackend::with_timeout(format!("http://{addr}/"), Duration::from_secs(5));
    assert_eq!(r.base_url(), format!("http://{addr}"));

    let g = r
        .generate(&GenerationRequest::new("lying", DecodingParams::default().with_seed(4)))
        .unwrap();
    assert_eq!(g.text, "Why lying? (seed 4)");

    let j = backends::judge(&r, "an accident").unwrap();
    assert_eq!(j.as_array(), [0.25, 0.25, 0.5]);
    assert_eq!(backends::nli(&r, "p", "h").unwrap(), NliLabel::Neutral);
    assert_eq!(backends::nli(&r, "p", "never").unwrap(), NliLabel::Contradiction);
    assert!(backends::qa_answerable(&r, "where was it", &Question::new("where was it?")).unwrap());
    assert_eq!(backends::similarity(&r, "a", "a").unwrap(), 1.0);
    assert_eq!(quandary::backends::RelevanceScorer::relevance(&r, "s", "q").unwrap(), 0.75);
}

#[test]
fn reward_engine_over_http() {
    let addr = spawn(mock());
    let r = Arc::new(RemoteBackend::new(format!("http://{addr}")));
    let engine = RewardEngine::new(r.clone(), r.clone()).with_classifier(r.clone()).with_samples(2);
    let s = Situation::new("breaking a vase").unwrap();
    let d = engine.simulate_pair(&s, &Question::new("Was it on purpose?")).unwrap();
    assert_eq!(d.weakener.as_ref().unwrap().answer.text(), "it was an accident");
    assert_eq!(d.strengthener.as_ref().unwrap().fused.text, "breaking a vase, given that I did it on purpose");
    let expected = quandary::jsd_raw([0.25, 0.25, 0.5], [0.75, 0.25, 0.0]).unwrap();
    assert_eq!(quandary::defeasibility::raw_reward(&d), expected);
}

#[test]
fn failures_are_classified() {
    let addr = spawn(mock());
    let broken = RemoteBackend::new(format!("http://{addr}/broken"));
    assert!(matches!(backends::judge(&broken, "x"), Err(BackendError::Unavailable(_))));
    let garbled = RemoteBackend::new(format!("http://{addr}/garbled"));
    assert!(matches!(backends::judge(&garbled, "x"), Err(BackendError::InvalidResponse(_))));

    // Nothing listens on a freshly released port.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let down = RemoteBackend::with_timeout(format!("http://127.0.0.1:{port}"), Duration::from_secs(2));
    assert!(matches!(backends::judge(&down, "x"), Err(BackendError::Unavailable(_))));
}
