use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cgt_cli::ops;
use cgt_cli::server::{router, AppState};
use cgt_cli::store;
use cgt_core::project::{init_project, load_project, replay, Project};
use cgt_core::qdtm::{export_annotation_bundle, MainTopic, RankedDoc, SamplerMeta, Subtopic, TopicTree};
use cgt_core::{AnnotationSession, Corpus, Document, WorkbenchConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    app: Router,
    researcher: String,
    tokens: Vec<(String, String)>,
}

fn terms(prefix: &str) -> Vec<(String, f64)> {
    (0..12).map(|i| (format!("{prefix}{i}"), 1.0 / (i + 1) as f64)).collect()
}

fn ranked(range: std::ops::Range<usize>) -> Vec<RankedDoc> {
    range.map(|i| RankedDoc { doc_id: format!("d{i}"), weight: 1.0, content_key: format!("k{i}") }).collect()
}

/// One main topic with two subtopics, a bundle and a three-annotator session.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("proj");
    let mut project = init_project(&root).unwrap();
    let docs: Vec<Document> = (0..20)
        .map(|i| Document { id: format!("d{i}"), source: "forum".into(), text: format!("post number {i} {}", "word ".repeat(i)), tokens: vec![] })
        .collect();
    let corpus = Corpus::from_documents(docs).unwrap();
    let sub = |id, r| Subtopic { id, tokens: 50, prevalence: 0.25, top_terms: terms(&format!("s{id}w")), ranked_docs: ranked(r) };
    let tree = TopicTree {
        mains: vec![MainTopic {
            id: 1,
            label: "work".into(),
            tokens: 100,
            prevalence: 1.0,
            top_terms: terms("m"),
            ranked_docs: ranked(0..12),
            subtopics: vec![sub(1, 0..12), sub(2, 6..18)],
        }],
        total_tokens: 100,
        sampler: SamplerMeta { seed: 1, iterations: 1, alpha: 0.1, beta: 0.01, boost: 10.0, gamma: 1.0, initial_subtopics: 1 },
    };
    let bundle = export_annotation_bundle(&tree, &corpus, 5, 10).unwrap();
    project.put_json(store::PREPARED, &corpus, "preprocess", json!(null)).unwrap();
    project.put_json(store::TREE, &tree, "qdtm.prune", json!(null)).unwrap();
    project.put_json(store::BUNDLE, &bundle, "qdtm.export", json!(null)).unwrap();
    let names: Vec<String> = ["ann1", "ann2", "ann3"].map(String::from).to_vec();
    let session = ops::open_session(&mut project, &names, &[]).unwrap();
    let researcher = ops::ensure_auth(&mut project).unwrap().researcher_token;
    let tokens = session.annotators.iter().map(|a| (a.id.clone(), a.token.clone())).collect();
    let app = router(Arc::new(AppState::new(project, WorkbenchConfig::default()).unwrap()));
    Fixture { _dir: dir, root, app, researcher, tokens }
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>, key: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    if let Some(k) = key {
        req = req.header("idempotency-key", k);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn coherent(topic: &str) -> Value {
    let rel = if topic.contains('.') { json!(3) } else { Value::Null };
    json!({"topic_id": topic, "coherence": 3, "issue": "none", "labels": [format!("label {topic}")], "relatedness": rel})
}

#[tokio::test]
async fn task_feed_lists_remaining_topics_with_posts_and_terms() {
    let f = fixture();
    let (status, body) = call(&f.app, "GET", "/api/v1/tasks", Some(&f.tokens[0].1), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["annotator"], "ann1");
    let tasks = body["tasks"].as_array().unwrap();
    assert_eq!(tasks.len(), 3);
    for t in tasks {
        assert_eq!(t["posts"].as_array().unwrap().len(), 5);
        assert_eq!(t["terms"].as_array().unwrap().len(), 10);
        assert_eq!(t["parent"].is_null(), t["parent_id"].is_null());
    }
    let (_, again) = call(&f.app, "GET", "/api/v1/tasks", Some(&f.tokens[0].1), None, None).await;
    assert_eq!(again, body, "task order is stable per annotator");
}

#[tokio::test]
async fn rule_violations_return_field_level_errors() {
    let f = fixture();
    let bad = json!({"topic_id": "1", "coherence": 2, "issue": "random", "labels": ["x"]});
    let (status, body) = call(&f.app, "POST", "/api/v1/annotations", Some(&f.tokens[0].1), Some(bad), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "random_requires_incoherent");
    assert_eq!(body["field"], "issue");
    assert_eq!(body["message"], "random issue requires incoherent rating");

    let forced = json!({"topic_id": "1.1", "coherence": 1, "issue": "random", "relatedness": 3});
    let (status, body) = call(&f.app, "POST", "/api/v1/annotations", Some(&f.tokens[0].1), Some(forced), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["field"], "relatedness");

    let (status, body) =
        call(&f.app, "POST", "/api/v1/annotations", Some(&f.tokens[0].1), Some(json!({"topic_id": 1})), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "malformed_request");
}

#[tokio::test]
async fn tokens_gate_roles() {
    let f = fixture();
    let (status, _) = call(&f.app, "GET", "/api/v1/tasks", None, None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call(&f.app, "GET", "/api/v1/tasks", Some("nope"), None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, body) = call(&f.app, "GET", "/api/v1/tree", Some(&f.tokens[1].1), None, None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["code"], "forbidden");
    let (status, body) = call(&f.app, "GET", "/api/v1/tree", Some(&f.researcher), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["mains"][0]["label"], "work");
    let (status, _) = call(&f.app, "GET", "/api/v1/nothing", None, None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn idempotent_submission_stores_one_record() {
    let f = fixture();
    let tok = &f.tokens[0].1;
    let (s1, b1) = call(&f.app, "POST", "/api/v1/annotations", Some(tok), Some(coherent("1")), Some("k-1")).await;
    let (s2, b2) = call(&f.app, "POST", "/api/v1/annotations", Some(tok), Some(coherent("1")), Some("k-1")).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::OK));
    assert_eq!(b1["audit"], b2["audit"]);
    assert_eq!(b2["replayed"], true);
    let session: AnnotationSession = load_project(&f.root).unwrap().get_json(store::SESSION).unwrap();
    assert_eq!(session.audit.len(), 1);

    // The key survives a restart.
    let app = router(Arc::new(AppState::new(load_project(&f.root).unwrap(), WorkbenchConfig::default()).unwrap()));
    let (s3, b3) = call(&app, "POST", "/api/v1/annotations", Some(tok), Some(coherent("1")), Some("k-1")).await;
    assert_eq!(s3, StatusCode::OK);
    assert_eq!(b3["audit"], b1["audit"]);
}

#[tokio::test]
async fn adjudication_waits_for_a_complete_session() {
    let f = fixture();
    let (status, body) = call(&f.app, "GET", "/api/v1/adjudication", Some(&f.researcher), None, None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["message"], "session incomplete");
    let (status, _) = call(&f.app, "POST", "/api/v1/adjudication", Some(&f.researcher), None, None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let votes = [("1", [3, 3, 2]), ("1.1", [3, 3, 3]), ("1.2", [1, 1, 2])];
    for (i, (_, tok)) in f.tokens.iter().enumerate() {
        for (topic, c) in &votes {
            let body = match c[i] {
                3 => coherent(topic),
                2 => json!({"topic_id": topic, "coherence": 2, "issue": "intruded", "implicated_posts": [4], "labels": ["a", "b"], "relatedness": if topic.contains('.') { json!(2) } else { Value::Null }}),
                _ => json!({"topic_id": topic, "coherence": 1, "issue": "random", "relatedness": 1}),
            };
            let (status, res) = call(&f.app, "POST", "/api/v1/annotations", Some(tok), Some(body), None).await;
            assert_eq!(status, StatusCode::CREATED, "{res}");
        }
    }
    let (status, progress) = call(&f.app, "GET", "/api/v1/session", Some(&f.researcher), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(progress["complete"], true);

    let (status, agreement) = call(&f.app, "GET", "/api/v1/agreement", Some(&f.researcher), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(agreement["report"]["pooled"]["topics"], 3);
    let (status, adj) = call(&f.app, "POST", "/api/v1/adjudication", Some(&f.researcher), None, None).await;
    assert_eq!(status, StatusCode::OK);
    let retained: Vec<&str> = adj["final_set"]["retained"].as_array().unwrap().iter().map(|t| t["topic_id"].as_str().unwrap()).collect();
    assert_eq!(retained, ["1", "1.1"]);
    assert_eq!(adj["final_set"]["excluded"][0]["reason"], "incoherent");

    let (status, _) =
        call(&f.app, "PUT", "/api/v1/final-set/topics/1.1/labels", Some(&f.researcher), Some(json!({"labels": ["remote work"]})), None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) =
        call(&f.app, "PUT", "/api/v1/final-set/topics/1.2/labels", Some(&f.researcher), Some(json!({"labels": ["x"]})), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // Coding sheets over the final set.
    let (status, report) = call(&f.app, "GET", "/api/v1/coding/report", Some(&f.researcher), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["total_posts"], 20);
    let (status, wb) = call(&f.app, "POST", "/api/v1/coding/sheets", Some(&f.researcher), None, None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(wb["groups"][0]["sheets"].as_array().unwrap().len(), 2);
    assert_eq!(wb["groups"][0]["sheets"][1]["initial_labels"], json!(["remote work"]));
    let entry = json!({"post": 3, "focused_code": "isolation", "memo": "lonely at home"});
    let (status, res) = call(&f.app, "POST", "/api/v1/coding/sheets/1.1/entries", Some(&f.researcher), Some(entry), None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(res["status"], "in-progress");
    let (status, res) =
        call(&f.app, "POST", "/api/v1/coding/sheets/1.1/entries", Some(&f.researcher), Some(json!({"post": 11})), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(res["field"], "post");
    let (status, sheet) = call(&f.app, "GET", "/api/v1/coding/sheets/1.1", Some(&f.researcher), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(sheet["sheet"]["entries"].as_array().unwrap().len(), 1);
    assert_eq!(sheet["header"], "Topic 1: label 1 / a / b");

    // Every mutation is in the event log and replaying it rebuilds the manifest.
    let project: Project = load_project(&f.root).unwrap();
    let events = project.events().unwrap();
    assert_eq!(events.iter().filter(|e| e.action == "annotation.submit").count(), 9);
    assert_eq!(&replay(&events), project.manifest());
}

#[tokio::test]
async fn status_is_public_and_reports_progress() {
    let f = fixture();
    let (status, body) = call(&f.app, "GET", "/api/v1/status", None, None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["session"]["stages"], json!([3]));
    assert_eq!(body["session"]["annotators"][0]["remaining"], 3);
    assert!(body["project"]["artifacts"].get(store::BUNDLE).is_some());
}
