//! REST service for interactive authoring of control signals.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | `POST` | `/sessions` | [`CreateSession`] JSON | `201` [`SessionView`] |
//! | `GET` | `/sessions/{id}` | | [`SessionView`] |
//! | `PATCH` | `/sessions/{id}` | [`Patch`] JSON | [`PatchSummary`] |
//! | `GET` | `/sessions/{id}/preview` | `from`, `to`, `raster`, `stride` | preview JSON or PNG |
//! | `GET` | `/sessions/{id}/export` | `part=tensor\|manifest\|provenance` | `CTRL` bytes or JSON |
//!
//! Errors are JSON `{"error": kind, "message": ...}` with 400 (malformed
//! upload), 404, 409 (stale `base_revision`), 413 (over 64 MiB), 416
//! (frame range), and 422 (invariant violation, incomplete script).

pub mod session;
pub mod store;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use motionforge::preview::PreviewFrame;
use motionforge::tensor::TensorManifest;

pub use session::{CreateSession, MaskInput, Patch, PatchOp, PatchSummary, SessionError, SessionState, SessionView};
pub use store::Store;

pub const DEFAULT_PORT: u16 = 8787;
pub const BODY_LIMIT: usize = 64 * 1024 * 1024;
pub const REVISION_HEADER: &str = "x-revision";

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let status = match &e {
            SessionError::BadRequest(_) | SessionError::DimensionMismatch(_) => StatusCode::BAD_REQUEST,
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Conflict { .. } => StatusCode::CONFLICT,
            SessionError::Invariant(_) | SessionError::IncompleteScript(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::FrameOutOfRange { .. } => StatusCode::RANGE_NOT_SATISFIABLE,
            SessionError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
        match &e {
            SessionError::IncompleteScript(units) => body["missing_units"] = serde_json::json!(units),
            SessionError::Conflict { current, .. } => body["revision"] = serde_json::json!(current),
            _ => {}
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, SessionError> {
    serde_json::from_slice(body).map_err(|e| SessionError::BadRequest(format!("malformed JSON: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, SessionError> + Send + 'static,
) -> Result<T, SessionError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| SessionError::Internal(e.to_string()))?
}

async fn create_session(State(store): State<Arc<Store>>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let upload: CreateSession = parse_json(&body)?;
    let state = blocking(move || store.create(&upload)).await?;
    log::info!("created session {}", state.id);
    Ok((StatusCode::CREATED, Json(state.view())))
}

async fn get_session(State(store): State<Arc<Store>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    Ok(Json(store.get(&id)?.view()))
}

async fn patch_session(
    State(store): State<Arc<Store>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<PatchSummary>> {
    let patch: Patch = parse_json(&body)?;
    let summary = blocking(move || store.patch(&id, &patch)).await?;
    Ok(Json(summary))
}

#[derive(Debug, Deserialize)]
struct PreviewQuery {
    #[serde(default)]
    from: usize,
    to: Option<usize>,
    #[serde(default)]
    raster: bool,
    #[serde(default)]
    stride: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub revision: u64,
    pub frames: Vec<PreviewFrame>,
}

async fn preview(
    State(store): State<Arc<Store>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Response> {
    let state = store.get(&id)?;
    let to = q.to.unwrap_or(q.from);
    let revision = state.revision;
    if q.raster {
        if to != q.from {
            return Err(SessionError::BadRequest("raster previews take a single frame".into()).into());
        }
        let png = blocking(move || state.preview_png(q.from)).await?;
        return Ok((
            [(header::CONTENT_TYPE, "image/png".to_string()), (REVISION_HEADER.parse().unwrap(), revision.to_string())],
            png,
        )
            .into_response());
    }
    let stride = q.stride.unwrap_or(1);
    let frames = blocking(move || state.preview(q.from, to, stride)).await?;
    Ok(([(REVISION_HEADER, revision.to_string())], Json(PreviewResponse { revision, frames })).into_response())
}

#[derive(Debug, Default, Deserialize, PartialEq, Eq, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum ExportPart {
    #[default]
    Tensor,
    Manifest,
    Provenance,
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    part: ExportPart,
}

/// What the export was made from.
#[derive(Debug, Serialize, Deserialize)]
pub struct ExportProvenance {
    pub session: String,
    pub revision: u64,
    pub view: SessionView,
}

async fn export(
    State(store): State<Arc<Store>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let state = store.get(&id)?;
    let revision = state.revision.to_string();
    if q.part == ExportPart::Provenance {
        let body = ExportProvenance {
            session: state.id.clone(),
            revision: state.revision,
            view: state.view(),
        };
        return Ok(([(REVISION_HEADER, revision)], Json(body)).into_response());
    }
    let snapshot = state.clone();
    let tensor = blocking(move || snapshot.export()).await?;
    Ok(match q.part {
        ExportPart::Manifest => {
            ([(REVISION_HEADER, revision)], Json(TensorManifest::new(&tensor, &state.partition))).into_response()
        }
        _ => (
            [
                (header::CONTENT_TYPE, "application/octet-stream".to_string()),
                (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}.ctrl\"")),
                (REVISION_HEADER.parse().unwrap(), revision),
            ],
            tensor.to_bytes(),
        )
            .into_response(),
    })
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).patch(patch_session))
        .route("/sessions/{id}/preview", get(preview))
        .route("/sessions/{id}/export", get(export))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(store)
}

/// Serves until the process exits. Sessions persist under `state_dir`
/// when given.
pub async fn serve(addr: SocketAddr, state_dir: Option<&Path>) -> std::io::Result<()> {
    let store = match state_dir {
        Some(dir) => Store::open(dir).map_err(|e| std::io::Error::other(e.to_string()))?,
        None => Store::in_memory(),
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(store))).await
}
