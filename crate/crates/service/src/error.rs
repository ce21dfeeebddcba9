use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use surveil_core::api::{ErrorBody, ErrorCode};
use surveil_core::Error;

/// An error response with a machine-readable code.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn out_of_phase(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::OutOfPhase, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, message)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(ErrorCode::NotFound, format!("no session {id:?}"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }

    pub fn status(&self) -> StatusCode {
        match self.code {
            ErrorCode::OutOfPhase | ErrorCode::Crashed | ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Crashed => ErrorCode::Crashed,
            Error::RoundCap(_) | Error::MissionFinished | Error::MissionUnfinished => ErrorCode::OutOfPhase,
            Error::OffLadder(_)
            | Error::LadderTop(_)
            | Error::InvalidConfig(_)
            | Error::Domain(_)
            | Error::Unsupported(_)
            | Error::NoFeedback
            | Error::DegenerateTable(_)
            | Error::NoObservableJunctions => ErrorCode::Validation,
            Error::Replay(_) => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(format!("storage: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        (status, Json(ErrorBody { code: self.code, message: self.message })).into_response()
    }
}
