//! HTTP front end of a triplet-comparison study.
//!
//! Endpoints:
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/api/hits/next?worker=ID` | issued HIT as JSON, or 204 when nothing is left |
//! | POST | `/api/assignments` | submission JSON in, outcome JSON out |
//! | GET | `/api/export?format=csv\|jsonl&kind=triplet\|dcr` | records; optional `source_id`, `distortion_type`, `boost` filters |
//! | GET | `/api/stimuli/{id}` | PNG frame |
//! | GET | `/api/stats` | counters |

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use boostiqa_core::image::{Image, ImageError};
use boostiqa_core::records::{write_dcr_csv, write_jsonl, write_triplet_csv};
use boostiqa_core::study::{ExportFilter, Study, StudyError, Submission};

/// Rendered frames addressed by id, held in memory or read from a directory.
#[derive(Debug, Default)]
pub struct Stimuli {
    frames: RwLock<HashMap<String, Vec<u8>>>,
    root: Option<PathBuf>,
}

impl Stimuli {
    pub fn new() -> Self {
        Self::default()
    }

    /// Falls back to `{root}/{id}.png` for ids not held in memory.
    pub fn with_root(root: impl Into<PathBuf>) -> Self {
        Self { frames: RwLock::default(), root: Some(root.into()) }
    }

    pub fn insert_png(&self, id: impl Into<String>, png: Vec<u8>) {
        self.frames.write().unwrap_or_else(|e| e.into_inner()).insert(id.into(), png);
    }

    pub fn insert(&self, id: impl Into<String>, image: &Image) -> Result<(), ImageError> {
        self.insert_png(id, image.encode_png()?);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Vec<u8>> {
        if let Some(png) = self.frames.read().unwrap_or_else(|e| e.into_inner()).get(id) {
            return Some(png.clone());
        }
        let path = self.root.as_ref()?.join(format!("{id}.png"));
        safe_relative(Path::new(id)).then(|| std::fs::read(path).ok()).flatten()
    }
}

/// Rejects absolute paths and parent-directory hops.
fn safe_relative(p: &Path) -> bool {
    p.components().all(|c| matches!(c, Component::Normal(_)))
}

#[derive(Debug, Clone)]
pub struct AppState {
    pub study: Arc<Study>,
    pub stimuli: Arc<Stimuli>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/hits/next", get(next_hit))
        .route("/api/assignments", post(submit))
        .route("/api/export", get(export))
        .route("/api/stimuli/{*id}", get(stimulus))
        .route("/api/stats", get(stats))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let status = match e {
            StudyError::InvalidWorker | StudyError::Malformed(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StudyError::UnknownHit(_) => StatusCode::NOT_FOUND,
            StudyError::Duplicate { .. } | StudyError::NoSession { .. } | StudyError::DuplicateHit(_) => {
                StatusCode::CONFLICT
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self(status, e.to_string())
    }
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    #[serde(default)]
    worker: String,
}

async fn next_hit(State(s): State<AppState>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    Ok(match s.study.next_assignment(&q.worker)? {
        Some(issued) => Json(issued).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(State(s): State<AppState>, Json(sub): Json<Submission>) -> Result<Response, ApiError> {
    Ok(Json(s.study.submit_assignment(&sub)?).into_response())
}

#[derive(Debug, Default, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Format {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Default, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Kind {
    #[default]
    Triplet,
    Dcr,
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    format: Format,
    #[serde(default)]
    kind: Kind,
    source_id: Option<String>,
    distortion_type: Option<String>,
    boost: Option<String>,
}

async fn export(State(s): State<AppState>, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    let filter = ExportFilter { source_id: q.source_id, distortion_type: q.distortion_type, boost: q.boost };
    let mut body = Vec::new();
    let written = match (q.kind, q.format) {
        (Kind::Triplet, Format::Csv) => write_triplet_csv(&mut body, &s.study.export_triplets(&filter)),
        (Kind::Triplet, Format::Jsonl) => write_jsonl(&mut body, &s.study.export_triplets(&filter)),
        (Kind::Dcr, Format::Csv) => write_dcr_csv(&mut body, &s.study.export_dcr(&filter)),
        (Kind::Dcr, Format::Jsonl) => write_jsonl(&mut body, &s.study.export_dcr(&filter)),
    };
    written.map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let mime = match q.format {
        Format::Csv => "text/csv; charset=utf-8",
        Format::Jsonl => "application/x-ndjson",
    };
    Ok(([(header::CONTENT_TYPE, mime)], body).into_response())
}

async fn stimulus(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let png = s.stimuli.get(&id).ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no stimulus {id}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn stats(State(s): State<AppState>) -> Response {
    Json(s.study.stats()).into_response()
}
