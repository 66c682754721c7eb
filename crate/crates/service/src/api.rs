//! HTTP routes.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::session::{BatchRecord, Estimates, Recommendation, SessionDefinition, SessionView, TargetOverrides};
use crate::store::SessionStore;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    /// Bearer token required on every route except `/healthz`.
    pub token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(store: SessionStore, token: Option<String>) -> Self {
        Self {
            store: Arc::new(store),
            token: token.map(Into::into),
        }
    }
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/batches", post(record_batch))
        .route("/sessions/{id}/recommendation", get(recommendation))
        .route("/sessions/{id}/whatif", post(whatif))
        .route("/sessions/{id}/estimates", get(estimates))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/healthz", get(healthz))
        .merge(protected)
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(request).await
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(JsonRejection::JsonDataError(e)) => Err(ServiceError::Validation {
            field: None,
            message: e.body_text(),
        }),
        Err(e) => Err(ServiceError::BadRequest(e.body_text())),
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    sessions: usize,
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        sessions: state.store.ids().len(),
    })
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<SessionDefinition>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ServiceError> {
    let definition = body(payload)?;
    let session = state.store.create(definition)?;
    tracing::info!(id = session.id(), "session created");
    Ok((StatusCode::CREATED, Json(session.view())))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(state.store.snapshot(&id)?.view()))
}

async fn record_batch(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<BatchRecord>, JsonRejection>,
) -> Result<Json<SessionView>, ServiceError> {
    let batch = body(payload)?;
    let session = state.store.record_batch(&id, batch)?;
    tracing::info!(id, total = session.estimates().total_samples, "batch recorded");
    Ok(Json(session.view()))
}

#[derive(Deserialize)]
struct RecommendQuery {
    b: Option<u64>,
}

async fn recommendation(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<RecommendQuery>, QueryRejection>,
) -> Result<Json<Recommendation>, ServiceError> {
    let Query(q) = query.map_err(|e| ServiceError::validation("b", e.body_text()))?;
    let b = q.b.ok_or_else(|| ServiceError::validation("b", "query parameter `b` is required"))?;
    let session = state.store.snapshot(&id)?;
    Ok(Json(session.recommend(b, &TargetOverrides::default())?))
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub b: u64,
    #[serde(flatten)]
    pub overrides: TargetOverrides,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct WhatIfResponse {
    pub current: Recommendation,
    pub hypothetical: Recommendation,
}

async fn whatif(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<WhatIfRequest>, JsonRejection>,
) -> Result<Json<WhatIfResponse>, ServiceError> {
    let request = body(payload)?;
    let session = state.store.snapshot(&id)?;
    Ok(Json(WhatIfResponse {
        current: session.recommend(request.b, &TargetOverrides::default())?,
        hypothetical: session.recommend(request.b, &request.overrides)?,
    }))
}

async fn estimates(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Estimates>, ServiceError> {
    Ok(Json(state.store.snapshot(&id)?.estimates()))
}
