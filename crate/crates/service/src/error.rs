use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fcap_core::Error as CoreError;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    BadRequest(String),

    #[error("{message}")]
    Conflict { message: String, current_revision: Option<u64> },

    #[error("{0}")]
    Unprocessable(String),

    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict { .. } => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> Value {
        match self {
            ApiError::Conflict {
                message,
                current_revision: Some(r),
            } => json!({ "error": message, "current_revision": r }),
            other => json!({ "error": other.to_string() }),
        }
    }

    /// Maps an error raised while applying an edit: infeasible anchors are
    /// 422, any other geometry problem 400.
    pub fn from_edit(e: CoreError) -> Self {
        match e {
            CoreError::InfeasibleAnchors { .. } => ApiError::Unprocessable(e.to_string()),
            CoreError::Io { .. } | CoreError::Image { .. } | CoreError::Json(_) | CoreError::MissingManifest(_) => {
                ApiError::Internal(e.to_string())
            }
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if matches!(self, ApiError::Internal(_)) {
            log::error!("{self}");
        }
        (self.status(), Json(self.body())).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
