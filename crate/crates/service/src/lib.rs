//! Read-mostly JSON API over a finished run, plus `POST /api/whatif` which
//! re-evaluates metrics and OTDD under a curator-chosen drop plan.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use shiftgate_core::cluster::{ScoreRow, ScoreTable};
use shiftgate_core::pipeline::{read_json, Layout, PipelineError, WhatifContext};
use shiftgate_core::quant::{DropPlan, QuantError};
use tower_http::cors::{Any, CorsLayer};

pub const DEFAULT_PORT: u16 = 8317;
/// Waiting what-if requests beyond which new ones are turned away.
pub const MAX_QUEUED: usize = 4;
const RETRY_AFTER_SECS: u64 = 5;
const DEFAULT_PER_PAGE: usize = 50;
const MAX_PER_PAGE: usize = 1000;

struct Loaded {
    ctx: WhatifContext,
    scores: ScoreTable,
    by_id: HashMap<String, f64>,
}

pub struct AppState {
    layout: Layout,
    loaded: Result<Loaded, String>,
    cache: Mutex<HashMap<String, Bytes>>,
    compute: tokio::sync::Mutex<()>,
    waiting: AtomicUsize,
}

impl AppState {
    /// Never fails: a run with missing artifacts is served as 409s.
    pub fn load(dir: &Path) -> Self {
        let layout = Layout::new(dir);
        let loaded = load_run(&layout).map_err(|e| e.to_string());
        if let Err(e) = &loaded {
            log::warn!("serving {} without a complete run: {e}", dir.display());
        }
        Self {
            layout,
            loaded,
            cache: Mutex::new(HashMap::new()),
            compute: tokio::sync::Mutex::new(()),
            waiting: AtomicUsize::new(0),
        }
    }

    pub fn is_ready(&self) -> bool {
        self.loaded.is_ok()
    }

    pub fn cached_plans(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// What-if requests waiting behind the running one.
    pub fn queued(&self) -> usize {
        self.waiting.load(Ordering::SeqCst)
    }

    /// Holds the what-if worker; requests queue up until the guard drops.
    pub async fn lock_compute(&self) -> tokio::sync::MutexGuard<'_, ()> {
        self.compute.lock().await
    }
}

fn load_run(layout: &Layout) -> Result<Loaded, PipelineError> {
    let ctx = WhatifContext::load(&layout.root)?;
    shiftgate_core::pipeline::require(&layout.scores(), "scores", "score")?;
    let scores: ScoreTable = read_json(&layout.scores())?;
    let by_id = scores.rows.iter().map(|r| (r.sample_id.clone(), r.s_total)).collect();
    Ok(Loaded { ctx, scores, by_id })
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    retry_after: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            retry_after: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = (self.status, Json(json!({ "error": self.message }))).into_response();
        if let Some(s) = self.retry_after {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from_str(&s.to_string()).expect("digits"));
        }
        resp
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn loaded(state: &AppState) -> ApiResult<&Loaded> {
    state
        .loaded
        .as_ref()
        .map_err(|e| ApiError::new(StatusCode::CONFLICT, format!("run artifacts missing: {e}")))
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct Page {
    #[serde(default)]
    page: usize,
    #[serde(default = "default_per_page")]
    per_page: usize,
}

fn default_per_page() -> usize {
    DEFAULT_PER_PAGE
}

impl Page {
    fn slice<'a, T>(&self, items: &'a [T]) -> &'a [T] {
        let per = self.per_page.clamp(1, MAX_PER_PAGE);
        let start = self.page.saturating_mul(per).min(items.len());
        &items[start..(start + per).min(items.len())]
    }

    fn echo(&self, total: usize) -> serde_json::Value {
        let per = self.per_page.clamp(1, MAX_PER_PAGE);
        json!({ "page": self.page, "per_page": per, "total": total, "pages": total.div_ceil(per) })
    }
}

async fn summary(State(state): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let l = loaded(&state)?;
    let r = &l.ctx.report;
    let classes: Vec<_> = r
        .clusters
        .iter()
        .map(|c| {
            let s = r.scores.iter().find(|s| s.class_label == c.class_label);
            json!({
                "class_label": c.class_label,
                "n": c.members.iter().map(Vec::len).sum::<usize>(),
                "k": c.k,
                "group_sizes": c.group_order.iter().map(|&g| c.members[g].len()).collect::<Vec<_>>(),
                "mean_score": s.map(|s| s.mean),
                "flagged_auroc": s.and_then(|s| s.flagged_auroc),
            })
        })
        .collect();
    Ok(Json(json!({
        "version": r.version,
        "generator": r.generator,
        "seed": r.config.seed,
        "label_mode": r.label_mode,
        "class_names": r.class_names,
        "k": r.k,
        "k_source": r.k_source,
        "classes": classes,
        "series": r.quantification.series.0.iter().map(|e| &e.label).collect::<Vec<_>>(),
        "whatif": { "rounds": l.ctx.otdd_config.rounds, "sample_per_round": l.ctx.otdd_config.sample_per_round },
    })))
}

fn known_class<'a>(l: &'a Loaded, class: &str) -> ApiResult<&'a shiftgate_core::cluster::ClusterAssignment> {
    l.ctx
        .report
        .cluster(class)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown class {class}")))
}

async fn class_scores(
    State(state): State<Arc<AppState>>,
    UrlPath(class): UrlPath<String>,
    Query(page): Query<Page>,
) -> ApiResult<Json<serde_json::Value>> {
    let l = loaded(&state)?;
    known_class(l, &class)?;
    let summary = l.ctx.report.scores.iter().find(|s| s.class_label == class);
    let rows: Vec<&ScoreRow> = l.scores.class_rows(&class).collect();
    Ok(Json(json!({
        "class_label": class,
        "summary": summary,
        "rows": page.slice(&rows),
        "pagination": page.echo(rows.len()),
    })))
}

#[derive(Serialize)]
struct GroupPage {
    group: usize,
    rank: usize,
    size: usize,
    mean_score: f64,
    samples: Vec<serde_json::Value>,
    pagination: serde_json::Value,
}

async fn class_clusters(
    State(state): State<Arc<AppState>>,
    UrlPath(class): UrlPath<String>,
    Query(page): Query<Page>,
) -> ApiResult<Json<serde_json::Value>> {
    let l = loaded(&state)?;
    let c = known_class(l, &class)?;
    let groups: Vec<GroupPage> = c
        .group_order
        .iter()
        .enumerate()
        .map(|(rank, &g)| {
            let ids = &c.members[g];
            GroupPage {
                group: g,
                rank,
                size: ids.len(),
                mean_score: c.group_means[g],
                samples: page
                    .slice(ids)
                    .iter()
                    .map(|id| json!({ "sample_id": id, "s_total": l.by_id.get(id), "image": format!("/api/images/{id}") }))
                    .collect(),
                pagination: page.echo(ids.len()),
            }
        })
        .collect();
    Ok(Json(json!({
        "class_label": class,
        "k": c.k,
        "group_order": c.group_order,
        "groups": groups,
    })))
}

async fn image(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let l = loaded(&state)?;
    if !l.by_id.contains_key(&id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown sample {id}")));
    }
    let bytes = tokio::fs::read(state.layout.thumb(&id))
        .await
        .map_err(|e| ApiError::new(StatusCode::CONFLICT, format!("run artifacts missing: thumbnail {id}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], bytes).into_response())
}

async fn quantification(State(state): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let l = loaded(&state)?;
    let q = &l.ctx.report.quantification;
    Ok(Json(json!({
        "label_mode": q.label_mode,
        "internal_test": q.internal_test,
        "series": q.series,
        "random_baseline": q.random_baseline,
        "otdd": l.ctx.report.otdd,
        "otdd_per_class": l.ctx.report.otdd_per_class,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WhatifRequest {
    plan: BTreeMap<String, usize>,
}

struct QueueSlot<'a>(&'a AtomicUsize);

impl Drop for QueueSlot<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn whatif(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let l = loaded(&state)?;
    let req: WhatifRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    let plan = shiftgate_core::pipeline::canonical_plan(&DropPlan(req.plan), l.ctx.clusters()).map_err(|e| match e {
        PipelineError::Quant(QuantError::InvalidPlan(m)) => ApiError::new(StatusCode::BAD_REQUEST, m),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    })?;
    let key = serde_json::to_string(&plan).expect("plan serialises");
    if let Some(hit) = state.cache.lock().expect("cache lock").get(&key).cloned() {
        return Ok(json_bytes(hit));
    }

    if state.waiting.fetch_add(1, Ordering::SeqCst) >= MAX_QUEUED {
        state.waiting.fetch_sub(1, Ordering::SeqCst);
        return Err(ApiError {
            retry_after: Some(RETRY_AFTER_SECS),
            ..ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "what-if queue is full")
        });
    }
    let slot = QueueSlot(&state.waiting);
    let _running = state.compute.lock().await;
    drop(slot);

    // a request queued behind an identical one finds its result here
    if let Some(hit) = state.cache.lock().expect("cache lock").get(&key).cloned() {
        return Ok(json_bytes(hit));
    }
    let worker = state.clone();
    let body = tokio::task::spawn_blocking(move || -> Result<Bytes, String> {
        let l = worker.loaded.as_ref().expect("checked above");
        let result = l.ctx.evaluate(&plan).map_err(|e| e.to_string())?;
        Ok(Bytes::from(serde_json::to_vec(&result).expect("result serialises")))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    state.cache.lock().expect("cache lock").insert(key, body.clone());
    Ok(json_bytes(body))
}

fn json_bytes(body: Bytes) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

const INDEX: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>shiftgate</title></head>
<body>
<h1>shiftgate</h1>
<p>No UI bundle is installed. The JSON API lives under <code>/api</code>:</p>
<ul>
<li><a href=\"/api/summary\">/api/summary</a></li>
<li>/api/classes/{class}/scores</li>
<li>/api/classes/{class}/clusters</li>
<li>/api/images/{sample_id}</li>
<li><a href=\"/api/quantification\">/api/quantification</a></li>
<li>POST /api/whatif</li>
</ul>
</body></html>
";

async fn index() -> Html<&'static str> {
    Html(INDEX)
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/", get(index))
        .route("/api/summary", get(summary))
        .route("/api/classes/{class}/scores", get(class_scores))
        .route("/api/classes/{class}/clusters", get(class_clusters))
        .route("/api/images/{sample_id}", get(image))
        .route("/api/quantification", get(quantification))
        .route("/api/whatif", post(whatif))
        .layer(cors)
        .with_state(state)
}

/// Serves the run in `dir` until interrupted.
pub async fn serve(dir: PathBuf, port: u16) -> std::io::Result<()> {
    let state = Arc::new(AppState::load(&dir));
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} on http://{addr}", dir.display());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(dir: PathBuf, port: u16) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(dir, port))
}
