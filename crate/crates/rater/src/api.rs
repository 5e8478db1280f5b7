//! HTTP/JSON routes; see `docs/API.md` for the wire format.

use std::sync::Arc;

use agf_core::dataset::LesionClass;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::RaterError;
use crate::session::SessionSpec;
use crate::store::{check_id, Store};

impl IntoResponse for RaterError {
    fn into_response(self) -> Response {
        let status = match &self {
            RaterError::Parameter(_) => StatusCode::BAD_REQUEST,
            RaterError::NotFound(_) => StatusCode::NOT_FOUND,
            RaterError::Conflict(_) => StatusCode::CONFLICT,
            RaterError::EmptyReport(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": { "code": self.code(), "message": self.to_string() } }))).into_response()
    }
}

type ApiResult<T> = Result<T, RaterError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    rater_id: String,
    real: usize,
    #[serde(default)]
    synthetic: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseBody {
    token: String,
    class: LesionClass,
    #[serde(default)]
    is_real: Option<bool>,
}

#[derive(Debug, Serialize)]
struct NextItem {
    token: String,
    position: usize,
    total_items: usize,
    ask_real: bool,
    image_url: String,
    image_png_base64: String,
}

#[derive(Debug, Deserialize)]
struct AgreementQuery {
    a: String,
    b: String,
}

async fn create(State(store): State<Arc<Store>>, body: Result<Json<CreateBody>, axum::extract::rejection::JsonRejection>) -> ApiResult<impl IntoResponse> {
    let Json(b) = body.map_err(|e| RaterError::Parameter(e.body_text()))?;
    let status = store.create(&SessionSpec { rater_id: b.rater_id, real: b.real, synthetic: b.synthetic, seed: b.seed })?;
    Ok((StatusCode::CREATED, Json(status)))
}

async fn status(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    check_id(&id)?;
    Ok(Json(store.status(&id)?))
}

async fn next(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Response> {
    check_id(&id)?;
    let Some(item) = store.next(&id)? else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let png = store.image(&id, &item.token)?;
    Ok(Json(NextItem {
        image_url: format!("/sessions/{id}/items/{}/image.png", item.token),
        image_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        token: item.token,
        position: item.position,
        total_items: item.total_items,
        ask_real: item.ask_real,
    })
    .into_response())
}

async fn image(State(store): State<Arc<Store>>, Path((id, token)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    check_id(&id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], store.image(&id, &token)?))
}

async fn respond(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Result<Json<ResponseBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    check_id(&id)?;
    let Json(b) = body.map_err(|e| RaterError::Parameter(e.body_text()))?;
    let r = store.submit(&id, &b.token, b.class, b.is_real)?;
    let status = store.status(&id)?;
    Ok(Json(json!({
        "accepted": true,
        "position": r.position,
        "remaining": status.total_items - status.answered,
        "complete": status.complete,
    })))
}

async fn report(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    check_id(&id)?;
    Ok(Json(store.report(&id)?))
}

async fn agreement(State(store): State<Arc<Store>>, q: Result<Query<AgreementQuery>, axum::extract::rejection::QueryRejection>) -> ApiResult<impl IntoResponse> {
    let Query(q) = q.map_err(|e| RaterError::Parameter(e.body_text()))?;
    check_id(&q.a)?;
    check_id(&q.b)?;
    Ok(Json(store.agreement(&q.a, &q.b)?))
}

async fn health() -> impl IntoResponse {
    Json(json!({ "status": "ok" }))
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/items/{token}/image.png", get(image))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/report", get(report))
        .route("/report/agreement", get(agreement))
        .with_state(store)
}

/// Serves until Ctrl-C.
pub async fn serve(store: Arc<Store>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
