use std::io::BufReader;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use serde_json::{json, Value};
use tower::ServiceExt;

use lexlab_core::audit::DEFAULT_SIM_THRESHOLD;
use lexlab_core::consult::{ConsultService, FixedClock, SeededIds};
use lexlab_core::corpus::{ingest_statutes, read_statute_jsonl, RecordSchema};
use lexlab_core::gateway::{register_mock, DefaultPolicy, MockTable};
use lexlab_core::{Auditor, LexicalIndex, TitleAliases};
use lexlab_server::{router, AppState};

const ANSWER: &str = "根据《民法典》第一千零四十七条的规定，结婚年龄，男不得早于二十二周岁，女不得早于二十周岁。";

fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn state(policy: DefaultPolicy) -> AppState {
    let aliases = TitleAliases::from_json(&std::fs::read_to_string(fixture("aliases.json")).unwrap()).unwrap();
    let f = std::fs::File::open(fixture("statutes_zh.jsonl")).unwrap();
    let records = read_statute_jsonl(BufReader::new(f), &RecordSchema::default()).unwrap();
    let idx = Arc::new(ingest_statutes(records, aliases).unwrap());
    let lex = Arc::new(LexicalIndex::with_defaults(&idx).unwrap());
    let auditor = Auditor::new(idx.clone(), DEFAULT_SIM_THRESHOLD).unwrap();
    let svc = ConsultService::new(idx, lex, Arc::new(register_mock(MockTable::new(), policy)), auditor)
        .with_clock(Arc::new(FixedClock(0)))
        .with_ids(Arc::new(SeededIds::new(7)));
    AppState::new(svc)
}

fn answering() -> AppState {
    state(DefaultPolicy::Constant { logprob_per_token: -1.0, text: ANSWER.into() })
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

#[tokio::test]
async fn session_turn_and_toggle() {
    let app = router(answering());
    let (st, session) = call(&app, "POST", "/api/sessions", None).await;
    assert_eq!(st, StatusCode::CREATED);
    let id = session["session_id"].as_str().unwrap().to_string();

    let (st, turn) = call(&app, "POST", &format!("/api/sessions/{id}/turns"), Some(json!({"message": "男方多大年龄可以结婚？"}))).await;
    assert_eq!(st, StatusCode::OK, "{turn}");
    assert_eq!(turn["status"], "ok");
    assert_eq!(turn["answer"], ANSWER);
    let included = turn["included_keys"].as_array().unwrap().clone();
    assert_eq!(included.len(), 3);
    let findings = turn["audit"]["findings"].as_array().unwrap();
    assert_eq!(findings.len(), 1);

    let keep: Vec<Value> = included[..1].to_vec();
    let (st, turn2) =
        call(&app, "POST", &format!("/api/sessions/{id}/turns"), Some(json!({"message": "男方多大年龄可以结婚？", "included_keys": keep}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(turn2["included_keys"].as_array().unwrap().len(), 1);
    assert!(turn2["prompt"].as_str().unwrap().contains(&format!("Lawyer: {ANSWER}")));

    let (st, back) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(back["turns"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn unknown_session_and_empty_message() {
    let app = router(answering());
    let (st, _) = call(&app, "GET", "/api/sessions/missing", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "POST", "/api/sessions/missing/turns", Some(json!({"message": "x"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let (_, session) = call(&app, "POST", "/api/sessions", None).await;
    let id = session["session_id"].as_str().unwrap();
    let (st, body) = call(&app, "POST", &format!("/api/sessions/{id}/turns"), Some(json!({"message": "   "}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST, "{body}");
}

#[tokio::test]
async fn backend_failure_is_502_and_recorded() {
    let app = router(state(DefaultPolicy::Error));
    let (_, session) = call(&app, "POST", "/api/sessions", None).await;
    let id = session["session_id"].as_str().unwrap();
    let (st, body) = call(&app, "POST", &format!("/api/sessions/{id}/turns"), Some(json!({"message": "结婚年龄"}))).await;
    assert_eq!(st, StatusCode::BAD_GATEWAY);
    assert_eq!(body["stage"], "chat");
    assert_eq!(body["turn"]["status"], "failed");
    let (_, back) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(back["turns"][0]["status"], "failed");
}

#[tokio::test]
async fn retrieve_and_audit() {
    let app = router(answering());
    let (st, r) = call(&app, "POST", "/api/retrieve", Some(json!({"query": "盗窃公私财物数额较大", "k": 2}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(r["ranked"].as_array().unwrap().len(), 2);
    assert_eq!(r["ranked"][0]["key"]["law_title"], "刑法");
    assert_eq!(r["ranked"][0]["key"]["article_no"], 264);

    let (st, _) = call(&app, "POST", "/api/retrieve", Some(json!({"query": ""}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);

    let (st, a) = call(&app, "POST", "/api/audit", Some(json!({"text": "依据《民法典》第九千条，以及《刑法》第二百六十四条。"}))).await;
    assert_eq!(st, StatusCode::OK);
    let verdicts: Vec<&str> = a["findings"].as_array().unwrap().iter().map(|f| f["verdict"].as_str().unwrap()).collect();
    assert_eq!(verdicts, ["H1", "VALID"]);
}

#[tokio::test]
async fn ranking_ballots() {
    let app = router(answering());
    let ballot = |q: &str, a: u32, b: u32| json!({"question_id": q, "entries": [{"system_id": "A", "rank": a}, {"system_id": "B", "rank": b}], "draw": false});
    let (st, body) = call(&app, "POST", "/api/rankings", Some(ballot("q1", 1, 2))).await;
    assert_eq!(st, StatusCode::CREATED);
    assert_eq!(body["accepted"], 1);
    let (st, _) = call(&app, "POST", "/api/rankings", Some(ballot("q2", 2, 1))).await;
    assert_eq!(st, StatusCode::CREATED);
    let (st, _) = call(&app, "POST", "/api/rankings", Some(ballot("q3", 1, 1))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(&app, "POST", "/api/rankings", Some(json!({"question_id": "q4", "entries": [], "draw": true}))).await;
    assert_eq!(st, StatusCode::CREATED);

    let (st, s) = call(&app, "GET", "/api/rankings/summary", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s["total"], 3);
    assert!((s["systems"]["A"]["ranks"]["1"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-9, "{s}");
}
