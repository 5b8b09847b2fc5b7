//! HTTP backend for the labelling and review UI.
//!
//! Routes: `GET /manifest`, `GET /frame/{trial}/{n}` (PNG), `GET|POST
//! /labels/{trial}` (JSON array of label records), `GET /results/{trial}`
//! (JSON Lines). Anything else is served from the UI directory when one is
//! configured, else a placeholder index page.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use tokio::sync::Mutex;

use crate::dataset::{load_frame, load_labels, parse_labels, save_labels, DatasetManifest, LabelRecord};

pub struct AppState {
    pub manifest: DatasetManifest,
    pub ui_dir: Option<PathBuf>,
    /// Serializes label writes.
    write_lock: Mutex<()>,
}

impl AppState {
    pub fn new(manifest: DatasetManifest, ui_dir: Option<PathBuf>) -> Self {
        Self { manifest, ui_dir, write_lock: Mutex::new(()) }
    }
}

#[derive(Debug, Serialize)]
struct TrialView {
    id: String,
    frames: usize,
    has_results: bool,
}

#[derive(Debug, Serialize)]
struct ManifestView {
    fps: f64,
    width: usize,
    height: usize,
    trials: Vec<TrialView>,
}

#[derive(Debug, Serialize)]
struct SaveAck {
    saved: usize,
}

fn error(status: StatusCode, message: impl ToString) -> Response {
    (status, Json(serde_json::json!({ "error": message.to_string() }))).into_response()
}

const INDEX: &str = "<!doctype html><html><head><meta charset=\"utf-8\"><title>pupiltrack labels</title></head>\
<body><h1>pupiltrack label server</h1><p>No UI directory configured; the data API is available at \
<code>/manifest</code>, <code>/frame/{trial}/{n}</code>, <code>/labels/{trial}</code> and \
<code>/results/{trial}</code>.</p></body></html>";

async fn manifest(State(app): State<Arc<AppState>>) -> Response {
    let m = &app.manifest;
    let mut trials = Vec::new();
    for t in &m.trials {
        let frames = match m.frame_paths(t) {
            Ok(p) => p.len(),
            Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e),
        };
        trials.push(TrialView { id: t.id.clone(), frames, has_results: m.results_path(t).is_file() });
    }
    Json(ManifestView { fps: m.fps, width: m.width, height: m.height, trials }).into_response()
}

async fn frame(State(app): State<Arc<AppState>>, Path((trial, n)): Path<(String, usize)>) -> Response {
    let m = &app.manifest;
    let Ok(t) = m.trial(&trial) else { return error(StatusCode::NOT_FOUND, format!("unknown trial `{trial}`")) };
    let paths = match m.frame_paths(t) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e),
    };
    let Some(path) = paths.get(n) else { return error(StatusCode::NOT_FOUND, format!("no frame {n}")) };
    let png = load_frame(path).map_err(|e| e.to_string()).and_then(|img| img.to_png_bytes().map_err(|e| e.to_string()));
    match png {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn get_labels(State(app): State<Arc<AppState>>, Path(trial): Path<String>) -> Response {
    let m = &app.manifest;
    let Ok(t) = m.trial(&trial) else { return error(StatusCode::NOT_FOUND, format!("unknown trial `{trial}`")) };
    let path = m.labels_path(t);
    if !path.exists() {
        return Json(Vec::<LabelRecord>::new()).into_response();
    }
    match load_labels(&path) {
        Ok(l) => Json(l).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

/// Replaces the trial's labels. Records are re-sorted by frame; for repeated
/// frames the last record wins.
async fn post_labels(State(app): State<Arc<AppState>>, Path(trial): Path<String>, body: Bytes) -> Response {
    let m = &app.manifest;
    let Ok(t) = m.trial(&trial) else { return error(StatusCode::NOT_FOUND, format!("unknown trial `{trial}`")) };
    let text = match std::str::from_utf8(&body) {
        Ok(s) => s,
        Err(_) => return error(StatusCode::BAD_REQUEST, "body is not UTF-8"),
    };
    let labels = match parse_labels(text) {
        Ok(l) => l,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let frames = match m.frame_paths(t) {
        Ok(p) => p.len(),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e),
    };
    if let Some(l) = labels.iter().find(|l| l.frame >= frames) {
        return error(StatusCode::BAD_REQUEST, format!("frame {} out of range ({frames} frames)", l.frame));
    }
    let mut by_frame = std::collections::BTreeMap::new();
    for l in labels {
        by_frame.insert(l.frame, l);
    }
    let merged: Vec<LabelRecord> = by_frame.into_values().collect();
    let _guard = app.write_lock.lock().await;
    match save_labels(&m.labels_path(t), &merged) {
        Ok(()) => Json(SaveAck { saved: merged.len() }).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn results(State(app): State<Arc<AppState>>, Path(trial): Path<String>) -> Response {
    let m = &app.manifest;
    let Ok(t) = m.trial(&trial) else { return error(StatusCode::NOT_FOUND, format!("unknown trial `{trial}`")) };
    match std::fs::read(m.results_path(t)) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/jsonl")], bytes).into_response(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            error(StatusCode::NOT_FOUND, format!("no results for `{trial}`"))
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

pub fn router(state: AppState) -> Router {
    let ui_dir = state.ui_dir.clone();
    let api = Router::new()
        .route("/manifest", get(manifest))
        .route("/frame/{trial}/{n}", get(frame))
        .route("/labels/{trial}", get(get_labels).post(post_labels))
        .route("/results/{trial}", get(results))
        .with_state(Arc::new(state));
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(INDEX) })),
    }
}

pub async fn serve(state: AppState, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    log::info!("label server listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
