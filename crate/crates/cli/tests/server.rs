use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use bird_cli::server::{router, AppState, SessionView};
use bird_core::engine::FollowupStrategy;
use bird_core::llm::{CompletionProvider, FixtureProvider};
use bird_core::pipeline::Pipeline;
use bird_core::{BundleCatalog, SessionStore};
use serde_json::{json, Value};
use tower::ServiceExt;

const CONDITION: &str = "You will walk around the room.";

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn state(store: SessionStore) -> Arc<AppState> {
    let catalog = BundleCatalog::load(&[fixture("worked.bundle.json")]).unwrap();
    let provider: Box<dyn CompletionProvider> =
        Box::new(FixtureProvider::from_files(&[fixture("worked.entail.jsonl")]).unwrap());
    Arc::new(AppState::new(catalog, store, Pipeline::with_defaults(provider), FollowupStrategy::Random))
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let request = match body {
        Some(b) => request.body(Body::from(b.to_string())),
        None => request.body(Body::empty()),
    }
    .unwrap();
    let response = router(state.clone()).oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = axum::body::to_bytes(response.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(state: &Arc<AppState>, body: Value) -> SessionView {
    let (status, v) = call(state, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    serde_json::from_value(v).unwrap()
}

fn p1(v: &Value) -> f64 {
    v["estimate"]["p_outcome1"].as_f64().unwrap()
}

fn pool(a: f64, b: f64) -> f64 {
    a * b / (a * b + (1.0 - a) * (1.0 - b))
}

#[tokio::test]
async fn lists_scenarios() {
    let s = state(SessionStore::in_memory());
    let (status, v) = call(&s, "GET", "/scenarios", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v[0]["scenario"]["id"], "worked-two-factor");
    assert_eq!(v[0]["factors"], 2);
    assert_eq!(v[0]["trained"], true);
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let s = state(SessionStore::in_memory());
    let (status, v) = call(&s, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
    let (status, _) = call(&s, "POST", "/sessions", Some(json!({"scenario_id": "missing"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&s, "POST", "/sessions/nope/question", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn empty_session_is_unknown_and_can_still_ask() {
    let s = state(SessionStore::in_memory());
    let view = create(&s, json!({"scenario_id": "worked-two-factor"})).await;
    assert_eq!(view.estimate.verdict, bird_core::Verdict::Unknown);
    assert_eq!(view.estimator, bird_core::EstimatorKind::Trained);
    let (status, q) = call(&s, "POST", &format!("/sessions/{}/question", view.session_id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(q["question_text"].as_str().unwrap().ends_with('?'), "{q}");
}

#[tokio::test]
async fn condition_question_and_answer_flow() {
    let s = state(SessionStore::in_memory());
    let view = create(&s, json!({"scenario_id": "worked-two-factor", "condition_text": CONDITION})).await;
    assert_eq!(view.observation.get("A"), Some("a1"));
    assert!((view.estimate.p_outcome1 - 0.825).abs() < 1e-12);
    let id = view.session_id;

    let (status, _) = call(&s, "POST", &format!("/sessions/{id}/answer"), Some(json!({"answer": "yes"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, q) = call(&s, "POST", &format!("/sessions/{id}/question"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(q["factor_id"], "B");
    // Asking again returns the same pending question.
    let (_, again) = call(&s, "POST", &format!("/sessions/{id}/question"), None).await;
    assert_eq!(q, again);

    let (status, _) = call(&s, "POST", &format!("/sessions/{id}/answer"), Some(json!({"answer": "maybe"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, v) = call(&s, "POST", &format!("/sessions/{id}/answer"), Some(json!({"answer": "yes"}))).await;
    assert_eq!(status, StatusCode::OK);
    let expected = if q["value_id"] == "b1" { pool(0.75, 0.75) } else { pool(0.75, 0.5) };
    assert!((p1(&v) - expected).abs() < 1e-12, "{}", p1(&v));
    assert_eq!(v["observation"]["B"], q["value_id"]);
    assert!(v["pending_question"].is_null());

    let (status, _) = call(&s, "POST", &format!("/sessions/{id}/answer"), Some(json!({"answer": true}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&s, "POST", &format!("/sessions/{id}/question"), None).await;
    assert_eq!(status, StatusCode::CONFLICT, "every factor is observed");
}

#[tokio::test]
async fn observation_body_is_used_directly() {
    let s = state(SessionStore::in_memory());
    let view = create(&s, json!({"scenario_id": "worked-two-factor", "observation": {"A": "a1", "B": "b1"}})).await;
    assert!((view.estimate.p_outcome1 - 0.9).abs() < 1e-12);
    let (status, _) = call(&s, "POST", "/sessions", Some(json!({"scenario_id": "worked-two-factor", "observation": {"A": "zz"}}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn overrides_validate_and_match_the_cli() {
    let s = state(SessionStore::in_memory());
    let view = create(&s, json!({"scenario_id": "worked-two-factor", "observation": {"A": "a1"}})).await;
    let uri = format!("/sessions/{}/override", view.session_id);
    let (status, _) = call(&s, "POST", &uri, Some(json!({"factor_id": "A", "value_id": "a1", "p": 1.5}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&s, "POST", &uri, Some(json!({"factor_id": "Q", "value_id": "a1", "p": 0.5}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, v) = call(&s, "POST", &uri, Some(json!({"factor_id": "A", "value_id": "a1", "p": 0.9}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["factors"][0]["values"][0]["p_outcome1"], 0.9);

    let cli = std::process::Command::new(env!("CARGO_BIN_EXE_bird"))
        .args(["infer", fixture("worked.bundle.json").to_str().unwrap(), "--observe", "A=a1", "--override", "A=a1:0.9", "--json"])
        .output()
        .unwrap();
    assert!(cli.status.success());
    let cli: Value = serde_json::from_slice(&cli.stdout).unwrap();
    assert_eq!(cli["estimate"], v["estimate"]);
}

#[tokio::test]
async fn condition_endpoint_merges_observations() {
    let s = state(SessionStore::in_memory());
    let view = create(&s, json!({"scenario_id": "worked-two-factor", "observation": {"B": "b2"}})).await;
    let (status, v) = call(&s, "POST", &format!("/sessions/{}/condition", view.session_id), Some(json!({"text": CONDITION}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["observation"], json!({"A": "a1", "B": "b2"}));
    assert!((p1(&v) - pool(0.75, 0.5)).abs() < 1e-12);
    assert_eq!(v["history"].as_array().unwrap().len(), 2);
}

fn open(path: &Path) -> SessionStore {
    SessionStore::open(path).unwrap()
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let first = state(open(&path));
    let view = create(&first, json!({"scenario_id": "worked-two-factor", "condition_text": CONDITION})).await;
    let uri = format!("/sessions/{}", view.session_id);
    call(&first, "POST", &format!("{uri}/override"), Some(json!({"factor_id": "B", "value_id": "b2", "p": 0.3}))).await;

    let second = state(open(&path));
    let (status, reloaded) = call(&second, "GET", &uri, None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, original) = call(&first, "GET", &uri, None).await;
    assert_eq!(reloaded, original);
    assert_eq!(reloaded["history"].as_array().unwrap().len(), 2);

    // Writes through one state are visible to the other.
    call(&second, "POST", &format!("{uri}/question"), None).await;
    let (_, seen) = call(&first, "GET", &uri, None).await;
    assert_eq!(seen["pending_question"]["factor_id"], "B");
}
