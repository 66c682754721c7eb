//! End-to-end requests against the router.

use aps_service::{router, AppState, ErrorBody, Recommendation, SessionStore, SessionView, WhatIfResponse};
use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(token: Option<&str>) -> axum::Router {
    router(AppState::new(SessionStore::in_memory(), token.map(str::to_string)))
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn definition() -> Value {
    json!({
        "budget": 1000,
        "overall_target": 1e-4,
        "categories": [
            {"name": "north", "weight": 0.7, "theta": 2e-3},
            {"name": "south", "weight": 0.25, "theta": 2e-3},
            {"name": "islands", "weight": 0.05, "theta": 2e-3, "prior": {"truncation": [0.01, 0.2]}}
        ]
    })
}

async fn create(app: &axum::Router) -> SessionView {
    let (status, body) = call(app, Method::POST, "/sessions", Some(definition())).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    serde_json::from_value(body).unwrap()
}

#[tokio::test]
async fn health_and_not_found() {
    let app = app(None);
    let (status, body) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    let (status, body) = call(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let err: ErrorBody = serde_json::from_value(body).unwrap();
    assert_eq!(err.code, "not_found");
}

#[tokio::test]
async fn invalid_definitions_are_structured_errors() {
    let app = app(None);
    let bad = json!({"budget": 10, "categories": [{"name": "a", "weight": 0.5}, {"name": "b", "weight": 0.6}]});
    let (status, body) = call(&app, Method::POST, "/sessions", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "validation_failed");
    assert_eq!(body["field"], "weights");

    let no_budget = json!({"categories": [{"name": "a", "weight": 1.0}]});
    let (status, body) = call(&app, Method::POST, "/sessions", Some(no_budget)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let req = Request::builder()
        .method(Method::POST)
        .uri("/sessions")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn batches_update_estimates() {
    let app = app(None);
    let s = create(&app).await;
    assert_eq!(s.estimates.total_samples, 0);
    let islands = &s.estimates.categories[2];
    assert!(islands.interval[0] >= 0.01 && islands.interval[1] <= 0.2);

    let batch = json!({"counts": [{"samples": 100, "positives": 10}, {"samples": 40, "positives": 2}, {"samples": 5, "positives": 1}]});
    let (status, body) = call(&app, Method::POST, &format!("/sessions/{}/batches", s.id), Some(batch)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let view: SessionView = serde_json::from_value(body).unwrap();
    assert_eq!(view.batches.len(), 1);
    let north = &view.estimates.categories[0];
    assert_eq!((north.samples, north.positives), (100, 10));
    assert!((north.posterior_mean - 11.0 / 102.0).abs() < 1e-12);
    assert_eq!(north.empirical, Some(0.1));
    let r = view.estimates.overall.estimate.unwrap();
    assert!((r - (0.7 * 0.1 + 0.25 * 0.05 + 0.05 * 0.2)).abs() < 1e-12);

    let (_, est) = call(&app, Method::GET, &format!("/sessions/{}/estimates", s.id), None).await;
    assert_eq!(est["total_samples"], 145);

    let bad = json!({"counts": [{"samples": 1, "positives": 2}, {"samples": 0, "positives": 0}, {"samples": 0, "positives": 0}]});
    let (status, body) = call(&app, Method::POST, &format!("/sessions/{}/batches", s.id), Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["field"], "counts");
    let short = json!({"counts": [{"samples": 1, "positives": 0}]});
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{}/batches", s.id), Some(short)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn recommendations_do_not_mutate() {
    let app = app(None);
    let s = create(&app).await;
    let uri = format!("/sessions/{}/recommendation?b=60", s.id);
    let (status, first) = call(&app, Method::GET, &uri, None).await;
    assert_eq!(status, StatusCode::OK, "{first}");
    let (_, second) = call(&app, Method::GET, &uri, None).await;
    assert_eq!(first, second);
    let rec: Recommendation = serde_json::from_value(first).unwrap();
    assert_eq!(rec.allocation.iter().sum::<u64>(), 60);
    assert_eq!(rec.state_hash, s.state_hash);

    let whatif = json!({"b": 60, "overall_target": 1e-5});
    let (status, body) = call(&app, Method::POST, &format!("/sessions/{}/whatif", s.id), Some(whatif)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let w: WhatIfResponse = serde_json::from_value(body).unwrap();
    assert_eq!(w.current, rec);
    assert_eq!(w.hypothetical.overall_target, Some(1e-5));

    let (_, after) = call(&app, Method::GET, &format!("/sessions/{}", s.id), None).await;
    assert_eq!(after["state_hash"], s.state_hash.as_str());
    assert_eq!(after["batches"], json!([]));

    let (status, body) = call(&app, Method::GET, &format!("/sessions/{}/recommendation", s.id), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["field"], "b");
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{}/recommendation?b=0", s.id), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let bad = json!({"b": 10, "targets": [0.1]});
    let (status, body) = call(&app, Method::POST, &format!("/sessions/{}/whatif", s.id), Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["field"], "targets");
}

#[tokio::test]
async fn token_guards_everything_but_health() {
    let app = app(Some("s3cret"));
    let (status, _) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, Method::POST, "/sessions", Some(definition())).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["code"], "unauthorized");
    let req = Request::builder()
        .method(Method::POST)
        .uri("/sessions")
        .header(header::CONTENT_TYPE, "application/json")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::from(definition().to_string()))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::CREATED);
}
