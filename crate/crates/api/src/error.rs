use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use biotrak_core::{DumpError, LifecycleError, TraceError};
use biotrak_netsync::SubmitError;
use serde::{Deserialize, Serialize};

use crate::auth::AuthError;

/// Error payload: `{"error": {"code": .., "message": .., ...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    /// 1-based line of a rejected sensor dump.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    /// Byte offset of that line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    /// Authoritative API endpoints to retry a write against.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forward_to: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub detail: ErrorDetail,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            detail: ErrorDetail {
                code: code.to_owned(),
                message: message.into(),
                line: None,
                offset: None,
                forward_to: Vec::new(),
            },
        }
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn code(&self) -> &str {
        &self.detail.code
    }

    pub fn read_only(forward_to: Vec<String>) -> Self {
        let mut e = Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "not-authoritative",
            "this node is a read-only replica; submit to an authority",
        );
        e.detail.forward_to = forward_to;
        e
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, e.code(), e.to_string())
    }
}

impl From<LifecycleError> for ApiError {
    fn from(e: LifecycleError) -> Self {
        let status = match e {
            LifecycleError::RoleForbidden { .. } | LifecycleError::RoleNotGranted(_) => StatusCode::FORBIDDEN,
            LifecycleError::TransportAlreadyClosed(_) => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<DumpError> for ApiError {
    fn from(e: DumpError) -> Self {
        let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string());
        err.detail.line = e.line();
        err.detail.offset = e.offset();
        err
    }
}

impl From<TraceError> for ApiError {
    fn from(e: TraceError) -> Self {
        let status = match e {
            TraceError::DepthExceeded(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::NOT_FOUND,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::NotAuthoritative => ApiError::read_only(Vec::new()),
            SubmitError::Malformed(s) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, s.code(), s.to_string()),
            SubmitError::Rejected(l) => l.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.detail })).into_response()
    }
}
