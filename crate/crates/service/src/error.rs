use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use recourse_core::Error;

/// The `{code, message, detail}` envelope every failure is reported in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>, detail: Value) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                detail,
            },
        }
    }

    pub fn bad_request(message: impl Into<String>, detail: Value) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message, detail)
    }

    pub fn field(path: &str, message: impl Into<String>) -> Self {
        Self::bad_request(message, json!({ "path": path }))
    }

    pub fn missing(what: &str) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "missing_artifact",
            format!("session has no {what}"),
            json!({ "missing": what }),
        )
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_session",
            format!("no session `{id}`"),
            Value::Null,
        )
    }

    pub fn timeout(seconds: f64) -> Self {
        Self::new(
            StatusCode::GATEWAY_TIMEOUT,
            "timeout",
            format!("request did not finish within {seconds} s"),
            json!({ "timeout_seconds": seconds }),
        )
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::NoRobustCandidate { max_robust_logit } => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "no_robust_candidate",
                message,
                json!({ "max_robust_logit": max_robust_logit }),
            ),
            Error::IllConditioned { min_eigenvalue } => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "ill_conditioned",
                message,
                json!({ "min_eigenvalue": min_eigenvalue }),
            ),
            Error::Training { .. }
            | Error::Optimization { .. }
            | Error::Numerical(_)
            | Error::DegenerateFeature(_)
            | Error::EmptyEnsemble(_)
            | Error::TuningFailure { .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unprocessable", message, Value::Null)
            }
            Error::Io(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, Value::Null),
            _ => ApiError::bad_request(message, Value::Null),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Deserialize a request body, reporting the failing field path. An empty
/// body reads as `{}`.
pub fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let body = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}".as_slice()
    } else {
        body
    };
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::bad_request(e.into_inner().to_string(), json!({ "path": path }))
    })
}
