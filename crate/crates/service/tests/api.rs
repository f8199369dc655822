use std::path::Path;
use std::sync::{Arc, OnceLock};

use axum::body::{Body, Bytes};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use shiftgate_core::pipeline::{
    cmd_all, load_dataset, read_report, DataConfig, Layout, PipelineConfig, SynthData, EXTERNAL,
};
use shiftgate_core::quant::{evaluate_subset, retained_indices, Classifier, DropPlan};
use shiftgate_service::{router, AppState, MAX_QUEUED};
use tower::ServiceExt;

/// One finished tiny run shared by every test.
fn run_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::benchmark(5);
        cfg.out = Some(dir.path().to_path_buf());
        cfg.data = DataConfig::Synth(SynthData {
            classes: 3,
            image_size: 16,
            train_per_class: 40,
            test_per_class: 10,
            external_per_class: 40,
            ..SynthData::default()
        });
        cfg.anomaly.epochs_generator = 3;
        cfg.anomaly.epochs_discriminator = 2;
        cfg.anomaly.batch_size = 8;
        cfg.classifier.epochs = 3;
        cfg.cluster.k_override = Some(3);
        cfg.otdd.rounds = 2;
        cfg.otdd.sample_per_round = 20;
        cfg.baseline.seeds = 3;
        cfg.whatif.rounds = 2;
        cfg.whatif.sample_per_round = 20;
        cmd_all(&cfg).unwrap();
        dir
    })
    .path()
}

fn state() -> &'static Arc<AppState> {
    static STATE: OnceLock<Arc<AppState>> = OnceLock::new();
    STATE.get_or_init(|| Arc::new(AppState::load(run_dir())))
}

fn app() -> Router {
    router(state().clone())
}

async fn send(app: Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Bytes) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    (status, headers, resp.into_body().collect().await.unwrap().to_bytes())
}

async fn get(uri: &str) -> (StatusCode, Value) {
    let (s, _, body) = send(app(), Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn whatif_raw(app: Router, body: Value) -> (StatusCode, axum::http::HeaderMap, Bytes) {
    let req = Request::post("/api/whatif")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

#[tokio::test]
async fn summary_lists_classes() {
    let (s, v) = get("/api/summary").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["k"], 3);
    assert_eq!(v["class_names"], json!(["BAR_H", "BAR_V", "BLOB"]));
    assert_eq!(v["series"], json!(["TOP 3", "TOP 2", "TOP 1"]));
    assert_eq!(v["whatif"]["rounds"], 2);
    let n: u64 = v["classes"].as_array().unwrap().iter().map(|c| c["n"].as_u64().unwrap()).sum();
    assert_eq!(n, 120);
}

#[tokio::test]
async fn scores_paginate() {
    let (s, v) = get("/api/classes/BAR_V/scores?page=1&per_page=15").await;
    assert_eq!(s, StatusCode::OK);
    let total = v["pagination"]["total"].as_u64().unwrap() as usize;
    assert_eq!(v["rows"].as_array().unwrap().len(), 15.min(total - 15));
    assert!(v["rows"].as_array().unwrap().iter().all(|r| r["class_label"] == "BAR_V"));
    assert!(v["summary"]["histogram"]["counts"].is_array());
    let (_, all) = get("/api/classes/BAR_V/scores?per_page=1000").await;
    assert_eq!(all["rows"].as_array().unwrap().len(), total);
    assert_eq!(all["rows"][15], v["rows"][0]);
    assert_eq!(get("/api/classes/NOPE/scores").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cluster_pages_resolve_to_images() {
    let (s, v) = get("/api/classes/BLOB/clusters?per_page=1000").await;
    assert_eq!(s, StatusCode::OK);
    let groups = v["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 3);
    let means: Vec<f64> = groups.iter().map(|g| g["mean_score"].as_f64().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]));
    let order: Vec<u64> = groups.iter().map(|g| g["group"].as_u64().unwrap()).collect();
    assert_eq!(json!(order), v["group_order"]);
    for g in groups {
        assert_eq!(g["samples"].as_array().unwrap().len() as u64, g["size"].as_u64().unwrap());
        for sample in g["samples"].as_array().unwrap() {
            let uri = sample["image"].as_str().unwrap();
            let (s, h, body) = send(app(), Request::get(uri).body(Body::empty()).unwrap()).await;
            assert_eq!(s, StatusCode::OK, "{uri}");
            assert_eq!(h[header::CONTENT_TYPE], "image/x-portable-graymap");
            assert!(body.starts_with(b"P5\n16 16\n255\n"));
        }
    }
    assert_eq!(get("/api/classes/NOPE/clusters").await.0, StatusCode::NOT_FOUND);
    let (s, _, _) = send(app(), Request::get("/api/images/..%2Freport.json").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(get("/api/images/external-99999").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn quantification_is_the_report_block() {
    let (s, v) = get("/api/quantification").await;
    assert_eq!(s, StatusCode::OK);
    let report = read_report(run_dir()).unwrap();
    assert_eq!(v["series"], serde_json::to_value(&report.quantification.series).unwrap());
    assert_eq!(v["random_baseline"].as_array().unwrap().len(), 2);
    let keys: Vec<&String> = v["otdd"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["TOP_1", "TOP_2", "TOP_3"]);
    assert_eq!(v["otdd"]["TOP_3"], serde_json::to_value(report.otdd_scenario(3).unwrap()).unwrap());
    assert!(v["otdd_per_class"].is_null());
}

#[tokio::test]
async fn whatif_endpoints_of_the_series() {
    let report = read_report(run_dir()).unwrap();
    let series = &report.quantification.series;

    let (s, _, body) = whatif_raw(app(), json!({ "plan": {} })).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["metrics"], serde_json::to_value(&series.entry("TOP 3").unwrap().metrics).unwrap());
    assert_eq!(v["otdd_rounds"], 2);
    assert_eq!(v["otdd"]["rounds"].as_array().unwrap().len(), 2);

    let zeros = json!({ "plan": { "BAR_H": 0, "BAR_V": 0, "BLOB": 0 } });
    let (_, _, again) = whatif_raw(app(), zeros).await;
    assert_eq!(again, body, "same canonical plan, same bytes");

    let full = json!({ "plan": { "BAR_H": 2, "BAR_V": 2, "BLOB": 2 } });
    let (s, _, body) = whatif_raw(app(), full).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    let top1 = series.entry("TOP 1").unwrap();
    assert_eq!(v["metrics"], serde_json::to_value(&top1.metrics).unwrap());
    assert_eq!(v["counts"], serde_json::to_value(&top1.counts).unwrap());
}

#[tokio::test]
async fn mixed_plan_matches_offline_recomputation() {
    let plan = DropPlan([("BAR_V".to_string(), 2)].into());
    let (s, _, body) = whatif_raw(app(), json!({ "plan": { "BAR_V": 2 } })).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();

    // offline: fresh predictions restricted to the retained ids
    let layout = Layout::new(run_dir());
    let report = read_report(run_dir()).unwrap();
    let ext = load_dataset(&layout, EXTERNAL).unwrap();
    let g = Classifier::load(&layout.classifier()).unwrap();
    let probs = g.predict_dataset(&ext).unwrap();
    let idx = retained_indices(&ext, &report.clusters, &plan).unwrap();
    let offline = evaluate_subset(&probs, &ext, &idx, g.label_mode()).unwrap();
    assert_eq!(v["metrics"], serde_json::to_value(&offline).unwrap());
    assert_eq!(v["plan"], json!({ "BAR_H": 0, "BAR_V": 2, "BLOB": 0 }));

    let kept: usize = v["counts"].as_object().unwrap().values().map(|c| c.as_u64().unwrap() as usize).sum();
    assert_eq!(kept, idx.len());
    let bar_v = report.cluster("BAR_V").unwrap();
    assert_eq!(v["counts"]["BAR_V"], bar_v.members[bar_v.group_order[0]].len());
}

#[tokio::test]
async fn bad_plans_are_rejected() {
    for body in [
        json!({ "plan": { "BAR_H": 3 } }),
        json!({ "plan": { "NOPE": 1 } }),
        json!({ "plan": { "BAR_H": -1 } }),
        json!({ "plan": { "BAR_H": 1 }, "extra": true }),
        json!({ "nothing": 1 }),
    ] {
        let (s, _, _) = whatif_raw(app(), body.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
    }
    let req = Request::post("/api/whatif").body(Body::from("{not json")).unwrap();
    assert_eq!(send(app(), req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_queue_answers_503() {
    // a private state so cached plans from other tests cannot short-circuit
    let state = Arc::new(AppState::load(run_dir()));
    let guard = state.lock_compute().await;
    let mut waiting = Vec::new();
    for i in 0..MAX_QUEUED {
        let app = router(state.clone());
        let plan = json!({ "plan": { "BAR_H": i % 3, "BAR_V": i / 3 } });
        waiting.push(tokio::spawn(async move { whatif_raw(app, plan).await.0 }));
    }
    while state.queued() < MAX_QUEUED {
        tokio::task::yield_now().await;
    }
    let (s, h, _) = whatif_raw(router(state.clone()), json!({ "plan": { "BLOB": 1 } })).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert!(h.contains_key(header::RETRY_AFTER));
    drop(guard);
    for w in waiting {
        assert_eq!(w.await.unwrap(), StatusCode::OK);
    }
    assert_eq!(state.queued(), 0);
    assert_eq!(state.cached_plans(), MAX_QUEUED);
}

#[tokio::test]
async fn missing_run_is_409() {
    let empty = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::load(empty.path()));
    assert!(!state.is_ready());
    for uri in ["/api/summary", "/api/quantification", "/api/classes/A/scores", "/api/images/x"] {
        let (s, _, body) = send(router(state.clone()), Request::get(uri).body(Body::empty()).unwrap()).await;
        assert_eq!(s, StatusCode::CONFLICT, "{uri}");
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert!(v["error"].as_str().unwrap().contains("run artifacts missing"));
    }
    let (s, _, _) = whatif_raw(router(state), json!({ "plan": {} })).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn index_and_cors() {
    let (s, h, body) = send(app(), Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert!(h[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/html"));
    assert!(std::str::from_utf8(&body).unwrap().contains("/api/summary"));

    let req = Request::get("/api/summary")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let (_, h, _) = send(app(), req).await;
    assert_eq!(h[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}
