//! HTTP review service: serves frames and overlays, records analyst edits
//! per session, recomputes measurements and compares sessions.

pub mod app;
pub mod error;
pub mod session;

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use app::{replay, App, ExportKind, FrameView, NewSession, PullbackInfo, View};
pub use error::{ApiError, ApiResult};
pub use session::{ArcKeyword, ArcSpec, ArcsEdit, EditRequest, EditState, FrameEdits, LogEntry, Session};

/// Startup options for [`serve`].
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    /// Directory of a built front-end bundle hosted at `/`.
    pub ui_dir: Option<PathBuf>,
}

type Shared = Arc<App>;

async fn blocking<T, F>(app: &Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&App) -> ApiResult<T> + Send + 'static,
{
    let app = app.clone();
    tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

fn parse_json<T>(body: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    body.map(|Json(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], Bytes::from(bytes)).into_response()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageQuery {
    #[serde(default)]
    view: View,
    size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalysisQuery {
    session: Option<String>,
    #[serde(default)]
    view: View,
    size: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareQuery {
    a: String,
    b: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportQuery {
    #[serde(default)]
    doc: ExportKind,
}

fn query<T>(q: Result<Query<T>, axum::extract::rejection::QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn list_pullbacks(State(app): State<Shared>) -> ApiResult<Json<Vec<PullbackInfo>>> {
    blocking(&app, |a| a.list_pullbacks()).await.map(Json)
}

async fn frame_image(
    State(app): State<Shared>,
    Path((id, k)): Path<(String, usize)>,
    q: Result<Query<ImageQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    blocking(&app, move |a| a.frame_image(&id, k, q.view, q.size)).await.map(png)
}

async fn frame_analysis(
    State(app): State<Shared>,
    Path((id, k)): Path<(String, usize)>,
    q: Result<Query<AnalysisQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Json<FrameView>> {
    let q = query(q)?;
    blocking(&app, move |a| a.frame_analysis(&id, k, q.session.as_deref(), q.view, q.size))
        .await
        .map(Json)
}

async fn create_session(State(app): State<Shared>, body: Result<Json<NewSession>, JsonRejection>) -> ApiResult<Response> {
    let req = parse_json(body)?;
    let s = blocking(&app, move |a| a.create_session(&req)).await?;
    Ok((axum::http::StatusCode::CREATED, Json(s)).into_response())
}

async fn get_session(State(app): State<Shared>, Path(sid): Path<String>) -> ApiResult<Json<Session>> {
    blocking(&app, move |a| a.session(&sid)).await.map(Json)
}

async fn put_edits(
    State(app): State<Shared>,
    Path((sid, k)): Path<(String, usize)>,
    body: Result<Json<EditRequest>, JsonRejection>,
) -> ApiResult<Json<FrameView>> {
    let req = parse_json(body)?;
    blocking(&app, move |a| a.put_edits(&sid, k, &req)).await.map(Json)
}

async fn export(
    State(app): State<Shared>,
    Path(sid): Path<String>,
    q: Result<Query<ExportQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    blocking(&app, move |a| a.export(&sid, q.doc)).await.map(json_bytes)
}

/// Canonical JSON, byte-identical to `fcap compare` on the two exports.
async fn compare(
    State(app): State<Shared>,
    q: Result<Query<CompareQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    let bytes = blocking(&app, move |a| Ok(fcap_core::store::to_canonical_json(&a.compare(&q.a, &q.b)?)?)).await?;
    Ok(json_bytes(bytes))
}

async fn api_not_found() -> ApiError {
    ApiError::NotFound("no such endpoint".into())
}

/// The `/api` routes over `app`, plus the static bundle when configured.
pub fn router(app: Arc<App>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/pullbacks", get(list_pullbacks))
        .route("/pullbacks/{id}/frames/{k}", get(frame_image))
        .route("/pullbacks/{id}/frames/{k}/analysis", get(frame_analysis))
        .route("/sessions", post(create_session))
        .route("/sessions/{sid}", get(get_session))
        .route("/sessions/{sid}/frames/{k}/edits", put(put_edits))
        .route("/sessions/{sid}/export", get(export))
        .route("/compare", get(compare))
        .fallback(api_not_found)
        .with_state(app);
    let root = Router::new().nest("/api", api);
    match ui_dir {
        Some(dir) => root.fallback_service(ServeDir::new(dir)),
        None => root,
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    let app = Arc::new(App::new(config.data_root));
    log::info!("serving {}", app.root().display());
    axum::serve(listener, router(app, config.ui_dir)).await
}
