use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use storyloom_core::workspace::{ErrorClass, OpError};

pub const REVISION_HEADER: &str = "x-revision";

/// An error response: the structured body plus the project revision the
/// client should resync to.
#[derive(Debug)]
pub struct ApiError {
    pub error: OpError,
    pub revision: Option<u64>,
}

impl ApiError {
    pub fn at(error: impl Into<OpError>, revision: u64) -> Self {
        ApiError {
            error: error.into(),
            revision: Some(revision),
        }
    }
}

impl<E: Into<OpError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError {
            error: e.into(),
            revision: None,
        }
    }
}

pub fn status_for(class: ErrorClass) -> StatusCode {
    match class {
        ErrorClass::Invalid => StatusCode::BAD_REQUEST,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::Unprocessable => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorClass::Upstream => StatusCode::BAD_GATEWAY,
        ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(self.error.class);
        let mut res = (status, Json(json!({ "error": self.error.body, "revision": self.revision }))).into_response();
        if let Some(r) = self.revision {
            res.headers_mut().insert(REVISION_HEADER, HeaderValue::from(r));
        }
        res
    }
}
