use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cpduet_core::experiment::ExperimentError;
use cpduet_core::{CorpusError, SessionError};
use serde::{Deserialize, Serialize};

/// JSON error body: `{"error": code, "message": text, "status": code}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    pub status: u16,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`"))
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }

    pub fn from_session(e: SessionError) -> Self {
        let status = match &e {
            SessionError::EmptyModelList
            | SessionError::DuplicateModelId(_)
            | SessionError::InvalidModel(..)
            | SessionError::EmptyMessage
            | SessionError::Corpus(_) => StatusCode::BAD_REQUEST,
            SessionError::UnknownModel(_) => StatusCode::NOT_FOUND,
            SessionError::SessionActive
            | SessionError::PreconditionFailed(_)
            | SessionError::AlreadyActive
            | SessionError::NotActive
            | SessionError::ModelBusy(_)
            | SessionError::UnexpectedEvent { .. } => StatusCode::CONFLICT,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        Self::from_session(SessionError::Corpus(e))
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        let (status, code) = match &e {
            ExperimentError::NonPositiveMinutes(_) => (StatusCode::BAD_REQUEST, "invalid_minutes"),
            ExperimentError::EmptyLabel => (StatusCode::BAD_REQUEST, "empty_label"),
            ExperimentError::Parse(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ExperimentError::DuplicateRecord(..) => (StatusCode::CONFLICT, "duplicate_record"),
            ExperimentError::IncompletePairs(_) => (StatusCode::CONFLICT, "incomplete_pairs"),
            ExperimentError::EmptyStore => (StatusCode::CONFLICT, "empty_store"),
            ExperimentError::TimerState(..) => (StatusCode::CONFLICT, "timer_state"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}): {}", self.code, self.status.as_u16(), self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_string(),
            message: self.message,
            status: self.status.as_u16(),
        };
        (self.status, Json(body)).into_response()
    }
}
