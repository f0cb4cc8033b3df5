//! JSON error bodies shared by both HTTP APIs.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mage_core::host::HostError;
use mage_core::server::ServerError;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response: `{"error": CODE, "detail": text}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: code.to_owned(),
                detail: detail.into(),
            },
        }
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        use ServerError::*;
        let status = match &e {
            UnknownTest(_) | UnknownSession(_) | UnknownAgent(_) | UnknownStudent(_) => {
                StatusCode::NOT_FOUND
            }
            AlreadyDispatched(_) | NotPush(_) | SessionClosed(_) => StatusCode::CONFLICT,
            EmptyRoster | InvalidRoster(_) | InvalidEndpoint(_) | InvalidAgent(_)
            | BadMessage(_) | Agent(_) => StatusCode::BAD_REQUEST,
            Storage(_) | CorruptLog(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<HostError> for ApiError {
    fn from(e: HostError) -> Self {
        use HostError::*;
        let status = match &e {
            UnknownAgent(_) | NoActiveExam => StatusCode::NOT_FOUND,
            DuplicateAgent(_) | WrongHop { .. } | DeadlinePassed(_) | WrongQuestion { .. }
            | Finished(_) => StatusCode::CONFLICT,
            Engine(_) | Agent(_) | BadMessage(_) => StatusCode::BAD_REQUEST,
            Storage(_) | Corrupt(_) | InjectedCrash => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}
