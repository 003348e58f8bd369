use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chainanno_core::engine::ReplayError;
use chainanno_core::store::StoreError;
use serde::Serialize;

/// Every failed request answers with `{code, message}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct Body<'a> {
    code: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn unauthenticated(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", message)
    }

    pub fn forbidden() -> Self {
        Self::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            "administrator role required",
        )
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(Body {
            code: self.code,
            message: &self.message,
        });
        (self.status, body).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UserInactive(_) | StoreError::InvalidCredentials => {
                StatusCode::UNAUTHORIZED
            }
            StoreError::UnknownUser(_) | StoreError::UnknownInstance(_) => StatusCode::NOT_FOUND,
            StoreError::DuplicateUsername(_)
            | StoreError::NotAssigned { .. }
            | StoreError::DuplicateCommit { .. } => StatusCode::CONFLICT,
            StoreError::InvalidOptions(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::BadInput(_) => StatusCode::BAD_REQUEST,
            StoreError::Hash(_)
            | StoreError::Corrupt(_)
            | StoreError::Sqlite(_)
            | StoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let code = match &e {
            StoreError::UserInactive(_) => "inactive",
            other => other.code(),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<ReplayError> for ApiError {
    fn from(e: ReplayError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code, e.to_string())
    }
}
