use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use genlarp_core::extract::ExtractionError;
use genlarp_core::runtime::RuntimeError;
use genlarp_core::schema::SchemaError;
use genlarp_core::store::StoreError;
use serde_json::{json, Value};

/// Error reply with the uniform `{code, message, detail}` body.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.into(), message: message.into(), detail: Value::Null }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.code, "message": self.message, "detail": self.detail});
        (self.status, Json(body)).into_response()
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        let msg = e.to_string();
        match e {
            RuntimeError::Gate(reason) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, reason.code(), msg).with_detail(json!({"blocked": true}))
            }
            RuntimeError::UnknownCharacter(id) => {
                Self::new(StatusCode::NOT_FOUND, "UNKNOWN_CHARACTER", msg).with_detail(json!({"character_id": id}))
            }
            RuntimeError::UnknownNode(id) => {
                Self::new(StatusCode::NOT_FOUND, "UNKNOWN_NODE", msg).with_detail(json!({"node_id": id}))
            }
            RuntimeError::InvalidWorld(v) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "VALIDATION_ERROR", msg).with_detail(json!({"violations": v}))
            }
            RuntimeError::InvalidConfig(_) => Self::new(StatusCode::BAD_REQUEST, "INVALID_CONFIG", msg),
            RuntimeError::Agent(_) | RuntimeError::Decider(_) | RuntimeError::Replay(_) => Self::internal(msg),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::UnknownSession(id) => {
                Self::new(StatusCode::NOT_FOUND, "UNKNOWN_SESSION", msg).with_detail(json!({"session_id": id}))
            }
            StoreError::CorruptLog(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "CORRUPT_LOG", msg),
            StoreError::SequenceGap { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "SEQUENCE_GAP", msg),
            StoreError::Storage(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "STORAGE_ERROR", msg),
            StoreError::Validation(v) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "VALIDATION_ERROR", msg).with_detail(json!({"violations": v}))
            }
            StoreError::InvalidInput(_) => Self::new(StatusCode::BAD_REQUEST, "INVALID_INPUT", msg),
            StoreError::Runtime(r) => r.into(),
            StoreError::Extraction(x) => x.into(),
        }
    }
}

impl From<ExtractionError> for ApiError {
    fn from(e: ExtractionError) -> Self {
        let msg = e.to_string();
        match e {
            ExtractionError::EmptyInput => Self::new(StatusCode::BAD_REQUEST, "EMPTY_INPUT", msg),
            ExtractionError::InvalidConfig(_) => Self::internal(msg),
            ExtractionError::ExtractionFailed { attempts, last_violations } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "EXTRACTION_FAILED", msg)
                    .with_detail(json!({"attempts": attempts, "violations": last_violations}))
            }
            ExtractionError::Provider(_) => Self::new(StatusCode::BAD_GATEWAY, "PROVIDER_ERROR", msg),
        }
    }
}

impl From<SchemaError> for ApiError {
    fn from(e: SchemaError) -> Self {
        let msg = e.to_string();
        match e {
            SchemaError::Parse(p) => {
                Self::new(StatusCode::BAD_REQUEST, "MALFORMED_DOCUMENT", msg).with_detail(json!({"reason": p.to_string()}))
            }
            SchemaError::Validation(v) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "VALIDATION_ERROR", msg).with_detail(json!({"violations": v}))
            }
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "MALFORMED_REQUEST", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "MALFORMED_REQUEST", e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "MALFORMED_REQUEST", e.body_text())
    }
}
