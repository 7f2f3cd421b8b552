use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use dedupsec::FindingId;
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown finding ids {0:?}")]
    UnknownFinding(Vec<FindingId>),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{} findings are not assigned to a cluster", .0.len())]
    IncompleteAnnotation(Vec<FindingId>),
    #[error("{0}")]
    UniverseMismatch(String),
    #[error("no review is open")]
    NoReview,
    #[error("no review item {0}")]
    UnknownReviewItem(usize),
    #[error("unknown reason ids {0:?}")]
    UnknownReason(Vec<u32>),
    #[error("at least one reason is required")]
    EmptyReasons,
    #[error("review item {0} is already tagged")]
    AlreadyTagged(usize),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownFinding(_) => "unknown_finding",
            ServiceError::InvalidDataset(_) => "invalid_dataset",
            ServiceError::UnknownTool(_) => "unknown_tool",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::IncompleteAnnotation(_) => "incomplete_annotation",
            ServiceError::UniverseMismatch(_) => "universe_mismatch",
            ServiceError::NoReview => "no_review",
            ServiceError::UnknownReviewItem(_) => "unknown_review_item",
            ServiceError::UnknownReason(_) => "unknown_reason",
            ServiceError::EmptyReasons => "empty_reasons",
            ServiceError::AlreadyTagged(_) => "already_tagged",
            ServiceError::Storage(_) => "storage_error",
            ServiceError::Internal(_) => "internal_error",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) | ServiceError::NoReview | ServiceError::UnknownReviewItem(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::IncompleteAnnotation(_) | ServiceError::AlreadyTagged(_) => StatusCode::CONFLICT,
            ServiceError::Storage(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }

    fn detail(&self) -> Value {
        match self {
            ServiceError::UnknownFinding(ids) => json!({ "finding_ids": ids }),
            ServiceError::IncompleteAnnotation(ids) => json!({ "unassigned": ids }),
            ServiceError::UnknownReason(ids) => json!({ "reason_ids": ids }),
            other => Value::String(other.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            tracing::error!("{self}");
        }
        let body = json!({ "error": self.code(), "detail": self.detail() });
        (self.status(), Json(body)).into_response()
    }
}
