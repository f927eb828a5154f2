use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use situmatch::annotate::{AnnotationExport, AnnotationPair, AnnotationService, PairDoc};
use situmatch::stats::krippendorff_alpha;
use situmatch_cli::server::{router, AppState, ExportSummary};
use tower::ServiceExt;

const ANNOTATORS: [&str; 5] = ["ann", "bea", "cal", "dee", "eli"];

fn pairs(n: usize) -> Vec<AnnotationPair> {
    (0..n)
        .map(|i| {
            let doc = |k: &str| PairDoc {
                doc_id: format!("{k}{i}"),
                title: format!("AITA for thing {k}{i}?"),
                body: format!("story {k}{i}"),
            };
            AnnotationPair {
                pair_id: format!("p{i:03}"),
                treated: doc("t"),
                control: doc("c"),
            }
        })
        .collect()
}

fn app(dir: &Path, n: usize) -> Router {
    let service = AnnotationService::new(
        pairs(n),
        Vec::new(),
        ANNOTATORS.iter().map(|s| s.to_string()).collect(),
        vec!["ann".into()],
        11,
    )
    .unwrap()
    .with_log(&dir.join("log.jsonl"))
    .unwrap();
    router(AppState::new(service, dir.join("export.json")))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

/// Pairs p000..p049 get similarity 2 from everyone; the rest get 1, 1, 2
/// in rating order. Agency is always 3.
async fn rate_everything(app: &Router) {
    let mut seen: HashMap<String, usize> = HashMap::new();
    for a in ANNOTATORS {
        loop {
            let (status, next) = call(app, "GET", &format!("/api/next?annotator={a}"), None).await;
            assert_eq!(status, StatusCode::OK);
            if next["status"] == "done" {
                break;
            }
            let pair_id = next["pair_id"].as_str().unwrap().to_string();
            let step = next["step"].as_u64().unwrap();
            let value = if step == 2 {
                let index: usize = pair_id[1..].parse().unwrap();
                let k = seen.entry(pair_id.clone()).or_default();
                *k += 1;
                if index < 50 || *k == 3 {
                    2
                } else {
                    1
                }
            } else {
                3
            };
            let body = json!({ "annotator": a, "pair_id": pair_id, "step": step, "value": value });
            let (status, rec) = call(app, "POST", "/api/annotation", Some(body)).await;
            assert_eq!(status, StatusCode::CREATED, "{rec}");
        }
    }
}

#[tokio::test]
async fn five_annotators_rate_a_hundred_pairs_three_times() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 100);
    rate_everything(&app).await;

    let (status, progress) = call(&app, "GET", "/api/progress", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(progress["pairs_complete"], 100);
    let loads: Vec<u64> = progress["annotators"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["assigned"].as_u64().unwrap())
        .collect();
    assert!(loads.iter().max().unwrap() - loads.iter().min().unwrap() <= 1);

    let (status, summary) = call(&app, "POST", "/api/export", None).await;
    assert_eq!(status, StatusCode::OK);
    let summary: ExportSummary = serde_json::from_value(summary).unwrap();
    assert_eq!(summary.similarity_records, 300);
    assert_eq!(summary.agency_records, 600);

    // 100 ones and 200 twos; only the 50 mixed pairs disagree.
    let expected = 1.0 - (299.0 * 100.0) / (2.0 * 100.0 * 200.0);
    let export = AnnotationExport::load(&dir.path().join("export.json")).unwrap();
    let alpha = krippendorff_alpha(&export.similarity_matrix()).unwrap();
    assert!((alpha - expected).abs() < 1e-9, "{alpha} vs {expected}");
    assert_eq!(summary.similarity_alpha, Some(alpha));
    let mut raters: HashMap<&str, usize> = HashMap::new();
    for r in &export.similarity {
        *raters.entry(r.pair_id.as_str()).or_default() += 1;
    }
    assert!(raters.values().all(|&c| c == 3));

    let (_, done) = call(&app, "GET", "/api/next?annotator=cal", None).await;
    assert_eq!(done["status"], "done");
}

#[tokio::test]
async fn step_order_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 10);
    let (_, next) = call(&app, "GET", "/api/next?annotator=bea", None).await;
    assert_eq!(next["step"], 1);
    assert_eq!(next["question"], "agency");
    let pair = next["pair_id"].clone();

    let early = json!({ "annotator": "bea", "pair_id": pair, "step": 2, "value": 4 });
    let (status, body) = call(&app, "POST", "/api/annotation", Some(early)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("out of order"));

    let ok = json!({ "annotator": "bea", "pair_id": pair, "step": 1, "value": 4 });
    assert_eq!(
        call(&app, "POST", "/api/annotation", Some(ok.clone())).await.0,
        StatusCode::CREATED
    );
    // Resubmitting the same step is also out of order.
    assert_eq!(
        call(&app, "POST", "/api/annotation", Some(ok)).await.0,
        StatusCode::CONFLICT
    );
    let (_, next) = call(&app, "GET", "/api/next?annotator=bea", None).await;
    assert_eq!(
        (next["step"].as_u64(), next["documents"].as_array().unwrap().len()),
        (Some(2), 2)
    );
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 10);
    let (status, _) = call(&app, "GET", "/api/next?annotator=zed", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, next) = call(&app, "GET", "/api/next?annotator=dee", None).await;
    let bad = json!({ "annotator": "dee", "pair_id": next["pair_id"], "step": 1, "value": 9 });
    assert_eq!(
        call(&app, "POST", "/api/annotation", Some(bad)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );

    let stranger = json!({ "annotator": "zed", "pair_id": next["pair_id"], "step": 1, "value": 3 });
    assert_eq!(
        call(&app, "POST", "/api/annotation", Some(stranger)).await.0,
        StatusCode::NOT_FOUND
    );

    let res = json!({ "reviewer": "dee", "pair_id": "p000", "kind": "similarity", "value": 4 });
    assert_eq!(
        call(&app, "POST", "/api/resolution", Some(res)).await.0,
        StatusCode::FORBIDDEN
    );
    let res = json!({ "reviewer": "ann", "pair_id": "p000", "kind": "similarity", "value": 4, "note": "agreed" });
    assert_eq!(
        call(&app, "POST", "/api/resolution", Some(res)).await.0,
        StatusCode::CREATED
    );
}

#[tokio::test]
async fn shown_documents_are_blinded() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 10);
    let (_, next) = call(&app, "GET", "/api/next?annotator=eli", None).await;
    let text = next.to_string();
    for hidden in ["doc_id", "treated", "control", "distance", "verdict"] {
        assert!(!text.contains(hidden), "{hidden} leaked: {text}");
    }
}

#[tokio::test]
async fn log_replay_restores_progress() {
    let dir = tempfile::tempdir().unwrap();
    let app1 = app(dir.path(), 10);
    let (_, next) = call(&app1, "GET", "/api/next?annotator=ann", None).await;
    let sub = json!({ "annotator": "ann", "pair_id": next["pair_id"], "step": 1, "value": 5 });
    assert_eq!(
        call(&app1, "POST", "/api/annotation", Some(sub)).await.0,
        StatusCode::CREATED
    );
    drop(app1);

    let app2 = app(dir.path(), 10);
    let (_, progress) = call(&app2, "GET", "/api/progress", None).await;
    assert_eq!(progress["records"], 1);
    let (_, next2) = call(&app2, "GET", "/api/next?annotator=ann", None).await;
    assert_eq!(
        (next2["pair_id"].clone(), next2["step"].as_u64()),
        (next["pair_id"].clone(), Some(2))
    );
}

#[test]
fn state_is_shareable() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<Arc<AppState>>();
}
