#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use scribe_core::catalog::TableAsset;
use scribe_core::embedding::{EmbeddingProvider, HashEmbedder};
use scribe_core::expander::AbbreviationDictionary;
use scribe_core::fixtures::{make_fixture, Fixture, FixtureSpec};
use scribe_core::gateway::{ChatProvider, EchoMock, Gateway};
use scribe_core::index::{build_index, NameText};
use scribe_core::pipeline::{Engine, PipelineSettings};
use scribe_core::retry::RetryPolicy;
use scribe_service::{router, AppState, ReviewStore};

pub fn fixture() -> Fixture {
    let mut f = make_fixture(FixtureSpec::new(120, 8, 11)).unwrap();
    f.catalog.tables.push(TableAsset::new("empty_tbl", "lakehouse"));
    f
}

pub fn engine_with(fixture: &Fixture, provider: Arc<dyn ChatProvider>) -> Arc<Engine> {
    let embedder: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::default());
    let index = build_index(&fixture.catalog.columns, embedder.as_ref(), NameText::Spaced).unwrap();
    Arc::new(Engine {
        catalog: fixture.catalog.clone(),
        index,
        embedder,
        dictionary: AbbreviationDictionary::builtin(),
        gateway: Gateway::new(provider).with_retry(RetryPolicy::no_backoff(3)),
        settings: PipelineSettings::default(),
    })
}

pub fn echo_app(fixture: &Fixture, store: Arc<ReviewStore>) -> Router {
    router(AppState::new(Some(engine_with(fixture, Arc::new(EchoMock))), store))
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_raw(app, method, uri, body.map(|b| b.to_string()), None).await
}

pub async fn call_raw(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<String>,
    bearer: Option<&str>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    if let Some(t) = bearer {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()))
    };
    (status, value)
}

pub fn decision(text: &str, label: &str, version: u64) -> Value {
    serde_json::json!({
        "final_text": text,
        "label": label,
        "steward_id": "steward-1",
        "expected_version": version,
    })
}
