mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::*;
use iip_plane::http::router;

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn app() -> Router {
    router(Arc::new(empty_engine(fixed_clock())))
}

fn heater_change(id: &str) -> Value {
    json!({"change_id": id, "action": "turn on", "object_id": "heater-7"})
}

async fn seeded() -> Router {
    let app = app();
    let policy: Value = serde_json::from_str(HEATER_POLICY).unwrap();
    assert_eq!(call(&app, Method::POST, "/v1/policies", Some(policy)).await.0, StatusCode::CREATED);
    for d in [device_json("heater-7", "heater", &["zone1"], false), device_json("ac-3", "ac", &["zone1"], true)] {
        assert_eq!(call(&app, Method::POST, "/v1/devices", Some(d)).await.0, StatusCode::CREATED);
    }
    app
}

#[tokio::test]
async fn heater_change_round_trip() {
    let app = seeded().await;
    let (status, effect) = call(&app, Method::POST, "/v1/changes", Some(heater_change("c1"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(effect["decision"], "DOUBLE_CHECK");
    assert_eq!(effect["alerts"][0]["message"], ALERT);
    let token = effect["confirmation_token"].as_str().unwrap().to_string();

    let confirm = json!({"change_id": "c2", "action": "turn on", "object_id": "heater-7",
        "parameters": {"confirmation_token": token}});
    let (_, effect) = call(&app, Method::POST, "/v1/changes", Some(confirm)).await;
    assert_eq!(effect["decision"], "APPROVE");

    let (status, _) = call(&app, Method::POST, "/v1/devices", Some(device_json("ac-3", "ac", &["zone1"], false))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, effect) = call(&app, Method::POST, "/v1/changes", Some(heater_change("c3"))).await;
    assert_eq!(effect["decision"], "APPROVE");

    let (_, metrics) = call(&app, Method::GET, "/v1/metrics", None).await;
    assert_eq!(metrics["changes_total"], 3);
}

#[tokio::test]
async fn policy_admin() {
    let app = seeded().await;
    let policy: Value = serde_json::from_str(HEATER_POLICY).unwrap();
    let (status, body) = call(&app, Method::POST, "/v1/policies", Some(policy)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "DuplicateId");

    let (status, list) = call(&app, Method::GET, "/v1/policies", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
    let (status, one) = call(&app, Method::GET, "/v1/policies/bldg-0001", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(one["alert"], ALERT);

    assert_eq!(call(&app, Method::DELETE, "/v1/policies/bldg-0001", None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, Method::DELETE, "/v1/policies/bldg-0001", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, Method::GET, "/v1/policies/bldg-0001", None).await.0, StatusCode::NOT_FOUND);
    let (_, effect) = call(&app, Method::POST, "/v1/changes", Some(heater_change("c1"))).await;
    assert_eq!(effect["decision"], "APPROVE");
}

#[tokio::test]
async fn invalid_policy_reports_diagnostics() {
    let app = app();
    let mut policy: Value = serde_json::from_str(HEATER_POLICY).unwrap();
    policy["assertion"] = json!("affectedDevice.ac.on ==");
    let (status, body) = call(&app, Method::POST, "/v1/policies", Some(policy)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "ValidationFailed");
    assert!(!body["diagnostics"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn bad_requests() {
    let app = seeded().await;
    let (status, body) = call(&app, Method::POST, "/v1/changes", Some(json!({"change_id": "x", "action": "turn on", "object_id": "nope"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "UnknownDevice");

    let (status, _) = call(&app, Method::POST, "/v1/changes", Some(json!({"change_id": "x", "action": "", "object_id": "heater-7"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = call(&app, Method::POST, "/v1/changes", Some(json!({"action": "turn on"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "MalformedBody");

    let req = Request::post("/v1/policies").body(Body::from("{not json")).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);

    assert_eq!(call(&app, Method::GET, "/v1/devices/ghost", None).await.0, StatusCode::NOT_FOUND);
    let (status, dev) = call(&app, Method::GET, "/v1/devices/ac-3", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(dev["document"]["wot"]["type"], "ac");
}
