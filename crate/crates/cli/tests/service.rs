mod common;

use std::fs;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::Fixture;
use match3gen::bot::{evaluate_level, BotConfig};
use match3gen::model::{checkpoint_file_name, Checkpoint, Variant};
use match3gen::{CellKind, LevelGrid, LevelSize};
use match3gen_cli::service::Service;

fn bot() -> BotConfig {
    BotConfig {
        run_count: 4,
        ..BotConfig::default()
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn checkpoint(fx: &Fixture, variant: Variant) -> Checkpoint {
    Checkpoint::load(&fx.train(variant).join(checkpoint_file_name(2))).unwrap()
}

#[tokio::test]
async fn loading_state_answers_503_but_stays_healthy() {
    let service = Service::new(1, bot());
    let app = service.router(None);
    let (s, v) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["model_loaded"], false);
    let (s, _) = call(&app, "GET", "/api/model-info", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) = call(&app, "POST", "/api/generate", Some(json!({"width": 5, "height": 6}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);

    let fx = Fixture::new();
    assert!(service.install(checkpoint(&fx, Variant::Vanilla)));
    let (s, v) = call(&app, "GET", "/api/model-info", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["variant"], "vanilla");
    assert_eq!(v["epoch"], 2);
    assert!(v["moves_range"].is_null());
}

#[tokio::test]
async fn generate_is_deterministic_and_checks_fields() {
    let fx = Fixture::new();
    let ck = checkpoint(&fx, Variant::Avalon);
    let (m_min, m_max) = (ck.bounds.m_min, ck.bounds.m_max);
    let app = Service::with_model(ck, 1, bot()).router(None);

    let (s, v) = call(&app, "GET", "/api/model-info", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["m_min"].as_f64().unwrap(), v["m_max"].as_f64().unwrap()), (m_min, m_max));
    assert_eq!(v["moves_range"][1], 39.0);

    let payload = json!({"width": 5, "height": 6, "symmetry": "vertical", "moves": m_min, "seed": 3});
    let (s, a) = call(&app, "POST", "/api/generate", Some(payload.clone())).await;
    assert_eq!(s, StatusCode::OK, "{a}");
    let (_, b) = call(&app, "POST", "/api/generate", Some(payload)).await;
    assert_eq!(a, b);
    assert_eq!((a["width"].clone(), a["height"].clone(), a["symmetry"].clone()), (json!(5), json!(6), json!("vertical")));
    let rows: Vec<Vec<u8>> = serde_json::from_value(a["grid"].clone()).unwrap();
    let grid = LevelGrid::from_codes(&rows).unwrap();
    assert!(match3gen::grid::symmetric_within(&grid, LevelSize::new(5, 6).unwrap(), "vertical".parse().unwrap()));

    let (s, v) = call(&app, "POST", "/api/generate", Some(json!({"width": 10, "height": 6, "moves": m_min}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["errors"]["width"], "width must be in [4,9]");

    let (s, v) = call(&app, "POST", "/api/generate", Some(json!({"width": "5", "height": 12, "symmetry": "spiral"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    for field in ["width", "height", "symmetry"] {
        assert!(v["errors"][field].is_string(), "{v}");
    }

    let (s, v) = call(&app, "POST", "/api/generate", Some(json!({"width": 5, "height": 6, "moves": 99}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["errors"]["moves"].as_str().unwrap().contains("out of range"));

    let (s, v) = call(&app, "POST", "/api/generate", Some(json!([1, 2]))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["errors"]["body"].is_string());
}

#[tokio::test]
async fn vanilla_rejects_moves() {
    let fx = Fixture::new();
    let app = Service::with_model(checkpoint(&fx, Variant::Vanilla), 1, bot()).router(None);
    let (s, v) = call(&app, "POST", "/api/generate", Some(json!({"width": 5, "height": 6, "moves": 15}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["errors"]["moves"], "model has no difficulty conditioner");
    let (s, _) = call(&app, "POST", "/api/generate", Some(json!({"width": 5, "height": 6}))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn validate_matches_direct_bot_call() {
    let app = Service::new(2, bot()).router(None);
    let level = LevelGrid::with_play_area(LevelSize::new(7, 8).unwrap(), CellKind::Playfield);
    let (s, v) = call(&app, "POST", "/api/validate", Some(json!({"grid": level.to_codes()}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let direct = evaluate_level(&level, &bot());
    assert_eq!(v["median_moves"].as_f64().unwrap(), direct.median_moves);
    assert_eq!(v["std_moves"].as_f64().unwrap(), direct.std_moves);
    assert_eq!(v["success_rate"].as_f64().unwrap(), direct.success_rate);
    assert_eq!(v["valid"], direct.median_moves <= 20.0);
    assert_eq!(v["runs"], 4);
    assert_eq!(v["full_protocol"], false);

    let (s, v) = call(&app, "POST", "/api/validate", Some(json!({"grid": level.to_codes(), "runs": 2}))).await;
    assert_eq!(s, StatusCode::OK);
    let direct = evaluate_level(&level, &BotConfig { run_count: 2, ..bot() });
    assert_eq!(v["median_moves"].as_f64().unwrap(), direct.median_moves);

    let mut short = level.to_codes();
    short.pop();
    let (s, v) = call(&app, "POST", "/api/validate", Some(json!({"grid": short}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["errors"]["grid"].is_string());

    let (s, v) = call(&app, "POST", "/api/validate", Some(json!({"grid": vec![vec![7u8; 9]; 11], "runs": 0}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["errors"]["grid"].is_string() && v["errors"]["runs"].is_string());

    let (s, _) = call(&app, "POST", "/api/validate", Some(json!({}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn serves_static_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = Service::new(1, bot()).router(Some(dir.path()));
    let req = Request::builder().uri("/").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"<html>ui</html>");
    let (s, _) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(s, StatusCode::OK);
}
