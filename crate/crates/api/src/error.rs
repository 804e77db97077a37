use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use subjekt_core::model::Violation;
use subjekt_core::{ParseError, SchedulerError};

/// JSON error body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

#[derive(Debug)]
pub enum ApiError {
    Unauthenticated(String),
    MalformedBody(String),
    InvalidBody(String),
    Scheduler(SchedulerError),
    Internal(String),
}

impl From<SchedulerError> for ApiError {
    fn from(e: SchedulerError) -> Self {
        ApiError::Scheduler(e)
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_syntax() || e.is_eof() {
            ApiError::MalformedBody(e.to_string())
        } else {
            ApiError::InvalidBody(e.to_string())
        }
    }
}

fn body(error: &str, message: impl ToString) -> ErrorBody {
    ErrorBody { error: error.into(), message: message.to_string(), path: None, violations: Vec::new() }
}

impl ApiError {
    pub fn status_and_body(&self) -> (StatusCode, ErrorBody) {
        use SchedulerError as S;
        match self {
            ApiError::Unauthenticated(m) => (StatusCode::UNAUTHORIZED, body("unauthenticated", m)),
            ApiError::MalformedBody(m) => (StatusCode::BAD_REQUEST, body("syntax_error", m)),
            ApiError::InvalidBody(m) => (StatusCode::UNPROCESSABLE_ENTITY, body("invalid_body", m)),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, body("internal", m)),
            ApiError::Scheduler(e) => {
                let (status, code) = match e {
                    S::NotAuthorized { .. } => (StatusCode::FORBIDDEN, "not_authorized"),
                    S::NotVisible { .. } => (StatusCode::FORBIDDEN, "not_visible"),
                    S::UnknownUser(_) => (StatusCode::NOT_FOUND, "unknown_user"),
                    S::UnknownSubject(_) => (StatusCode::NOT_FOUND, "unknown_subject"),
                    S::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
                    S::UnknownInstance(_) => (StatusCode::NOT_FOUND, "unknown_instance"),
                    S::UnknownProcess(_) => (StatusCode::NOT_FOUND, "unknown_process"),
                    S::UnknownProcessInstance(_) => (StatusCode::NOT_FOUND, "unknown_process_instance"),
                    S::UnknownToSubject { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "unknown_to_subject"),
                    S::TaskAlreadyDone(_) => (StatusCode::CONFLICT, "task_already_done"),
                    S::ProcessTerminated(_) => (StatusCode::CONFLICT, "process_terminated"),
                    S::DuplicateProcess(_) => (StatusCode::CONFLICT, "duplicate_process"),
                    S::InvalidAnswer(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_answer"),
                    S::Refinement { .. } => (StatusCode::BAD_GATEWAY, "refinement_failed"),
                    S::Parse(ParseError::Syntax { .. }) => (StatusCode::BAD_REQUEST, "syntax_error"),
                    S::Parse(ParseError::Schema { .. }) => (StatusCode::UNPROCESSABLE_ENTITY, "schema_error"),
                    S::Parse(ParseError::Version { .. }) => (StatusCode::UNPROCESSABLE_ENTITY, "version_error"),
                    S::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_definition"),
                    S::Integrity(_) => (StatusCode::UNPROCESSABLE_ENTITY, "integrity_violation"),
                    S::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage_error"),
                };
                let mut b = body(code, e);
                match e {
                    S::Parse(ParseError::Schema { path, .. }) => b.path = Some(path.clone()),
                    S::Invalid(report) => {
                        b.message = "definition is invalid".into();
                        b.violations = report.violations.clone();
                    }
                    _ => {}
                }
                (status, b)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = self.status_and_body();
        if status.is_server_error() {
            tracing::error!(status = status.as_u16(), error = %body.message, "request failed");
        }
        (status, Json(body)).into_response()
    }
}
