//! HTTP front end of the signing service.
//!
//! | method | path                      | role     |
//! |--------|---------------------------|----------|
//! | POST   | `/firmware?version=&product=` | uploader |
//! | GET    | `/firmware/{id}`          | uploader |
//! | POST   | `/firmware/{id}/review`   | admin    |
//! | POST   | `/firmware/{id}/sign`     | admin    |
//! | GET    | `/firmware/{id}/package`  | uploader |
//! | GET    | `/issuer`                 | none     |
//!
//! Requests carry `Authorization: Bearer <token>`. Admin tokens may do
//! everything an uploader may. Errors are JSON objects
//! `{"error": <code>, "message": <text>}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridsign_core::crypto::SigningAlgorithm;
use gridsign_core::review::ReviewPolicy;
use serde::{Deserialize, Serialize};

use crate::service::{ServiceError, SigningService};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Uploader,
    Admin,
}

#[derive(Clone)]
pub struct ApiToken {
    pub name: String,
    pub role: Role,
    pub secret: String,
}

impl std::fmt::Debug for ApiToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ApiToken")
            .field("name", &self.name)
            .field("role", &self.role)
            .finish_non_exhaustive()
    }
}

pub struct AppState {
    pub service: SigningService,
    pub policy: ReviewPolicy,
    pub tokens: Vec<ApiToken>,
}

#[derive(Debug)]
pub enum ApiError {
    Unauthorized,
    Forbidden,
    BadRequest(String),
    Service(ServiceError),
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError::Service(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match self {
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, "Unauthorized", "missing or unknown token".into()),
            ApiError::Forbidden => (StatusCode::FORBIDDEN, "Forbidden", "token lacks the required role".into()),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "InvalidRequest", m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "Internal", m),
            ApiError::Service(e) => {
                let status = match &e {
                    ServiceError::NotFound => StatusCode::NOT_FOUND,
                    ServiceError::InvalidState { .. } => StatusCode::CONFLICT,
                    ServiceError::UnknownKeyRef(_)
                    | ServiceError::AlgorithmMismatch { .. }
                    | ServiceError::EmptyFirmware
                    | ServiceError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
                    ServiceError::PayloadTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
                    ServiceError::Signing(_) | ServiceError::Storage(_) => {
                        tracing::error!(error = %e, "request failed");
                        StatusCode::INTERNAL_SERVER_ERROR
                    }
                };
                (status, e.code(), e.to_string())
            }
        };
        (status, Json(ErrorBody { error: code, message })).into_response()
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Returns the token name when the request may act with `needed`.
fn authorize(state: &AppState, headers: &HeaderMap, needed: Role) -> Result<String, ApiError> {
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or(ApiError::Unauthorized)?;
    let token = state
        .tokens
        .iter()
        .find(|t| constant_time_eq(t.secret.as_bytes(), presented.as_bytes()))
        .ok_or(ApiError::Unauthorized)?;
    if needed == Role::Admin && token.role != Role::Admin {
        return Err(ApiError::Forbidden);
    }
    Ok(token.name.clone())
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
pub struct UploadQuery {
    pub version: String,
    pub product: String,
}

#[derive(Debug, Deserialize)]
pub struct SignRequest {
    pub key_ref: String,
    #[serde(default = "default_alg")]
    pub alg: String,
}

fn default_alg() -> String {
    SigningAlgorithm::EcdsaP256Sha256.name().to_string()
}

async fn upload(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let actor = authorize(&state, &headers, Role::Uploader)?;
    let record = blocking(move || state.service.submit(&body, &q.version, &q.product, &actor)).await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn status(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    authorize(&state, &headers, Role::Uploader)?;
    Ok(Json(blocking(move || state.service.get(&id)).await?))
}

async fn review(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let actor = authorize(&state, &headers, Role::Admin)?;
    let record = blocking(move || state.service.review(&id, &state.policy, &actor)).await?;
    Ok(Json(record))
}

async fn sign(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<SignRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let actor = authorize(&state, &headers, Role::Admin)?;
    let alg = SigningAlgorithm::from_name(&req.alg)
        .map_err(|_| ApiError::BadRequest(format!("unsupported algorithm {:?}", req.alg)))?;
    let record = blocking(move || state.service.sign(&id, alg, &req.key_ref, &actor)).await?;
    Ok(Json(record))
}

async fn package(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    authorize(&state, &headers, Role::Uploader)?;
    let bytes = blocking(move || state.service.download(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/cose; cose-type=\"cose-sign1\"")], bytes))
}

async fn issuer(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    (
        [(header::CONTENT_TYPE, "application/pkix-cert")],
        state.service.issuer().der().to_vec(),
    )
}

pub fn router(state: AppState) -> Router {
    let limit = usize::try_from(state.service.max_upload_bytes())
        .unwrap_or(usize::MAX)
        .saturating_add(1);
    Router::new()
        .route("/firmware", post(upload))
        .route("/firmware/{id}", get(status))
        .route("/firmware/{id}/review", post(review))
        .route("/firmware/{id}/sign", post(sign))
        .route("/firmware/{id}/package", get(package))
        .route("/issuer", get(issuer))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(Arc::new(state))
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
