mod common;

use std::sync::Arc;

use axum::http::{Method, StatusCode};
use serde_json::{json, Value};

use common::*;
use scribe_core::eval::{summarize, FeedbackRecord};
use scribe_core::gateway::DownMock;
use scribe_core::prompt::physical_sentence;
use scribe_core::prompt::PhysicalInfo;
use scribe_service::store::{ReviewItem, ReviewStatus};
use scribe_service::{router, AppState, ReviewStore};

fn key_json(k: &scribe_core::catalog::ColumnKey) -> Value {
    serde_json::to_value(k).unwrap()
}

#[tokio::test]
async fn exact_match_column_echoes_the_matched_example() {
    let f = fixture();
    let app = echo_app(&f, Arc::new(ReviewStore::in_memory()));
    for target in f.exact_targets.iter().take(5) {
        let (status, body) = call(&app, Method::POST, "/v1/columns/describe", Some(key_json(&target.query))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let item: ReviewItem = serde_json::from_value(body).unwrap();
        assert_eq!(item.status, ReviewStatus::Pending);
        assert_eq!(item.version, 1);
        let scribe_service::store::Trace::Column(trace) = &item.trace else {
            panic!("column trace expected")
        };
        let first = &trace.retrieval.examples[0];
        assert_eq!(first.key, target.expected_first);
        let original = f.catalog.column(&target.expected_first).unwrap();
        assert_eq!(item.generation.processed_output, first.example_text);
        assert_eq!(Some(item.generation.processed_output.as_str()), original.description.as_deref());
        assert!(trace.copy.copied);
    }
}

#[tokio::test]
async fn full_asset_is_described_as_given() {
    let f = fixture();
    let app = echo_app(&f, Arc::new(ReviewStore::in_memory()));
    let body = json!({
        "column_name": "cust_acct_nbr",
        "table_name": "not_in_catalog",
        "data_source": "crm",
        "comment": "Customer account number"
    });
    let (status, item) = call(&app, Method::POST, "/v1/columns/describe", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{item}");
    assert_eq!(item["trace"]["expansion"]["expanded_name"], "customer account number");
}

#[tokio::test]
async fn column_errors() {
    let f = fixture();
    let app = echo_app(&f, Arc::new(ReviewStore::in_memory()));
    let unknown = json!({"column_name": "nope", "table_name": "nope", "data_source": "nope"});
    let (status, body) = call(&app, Method::POST, "/v1/columns/describe", Some(unknown)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");

    let (status, _) = call_raw(&app, Method::POST, "/v1/columns/describe", Some("{not json".into()), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::POST, "/v1/columns/describe", Some(json!({"column_name": "x"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let down = router(AppState::new(
        Some(engine_with(&f, Arc::new(DownMock::default()))),
        Arc::new(ReviewStore::in_memory()),
    ));
    let key = key_json(&f.exact_targets[0].query);
    let (status, body) = call(&down, Method::POST, "/v1/columns/describe", Some(key)).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["attempts"], 3);
}

#[tokio::test]
async fn no_engine_means_503() {
    let app = router(AppState::new(None, Arc::new(ReviewStore::in_memory())));
    let key = json!({"column_name": "a", "table_name": "b", "data_source": "c"});
    let (status, _) = call(&app, Method::POST, "/v1/columns/describe", Some(key)).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, body) = call(&app, Method::GET, "/v1/metrics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["records"], 0);
    assert_eq!(body["mean_rouge1_f1"], Value::Null);
}

#[tokio::test]
async fn table_description_is_stitched() {
    let f = fixture();
    let app = echo_app(&f, Arc::new(ReviewStore::in_memory()));
    let t = &f.catalog.tables[0];
    let req = json!({
        "table_name": t.table_name,
        "data_source": t.data_source,
        "business_context": "Feeds the quarterly regulatory filing."
    });
    let (status, item) = call(&app, Method::POST, "/v1/tables/describe", Some(req)).await;
    assert_eq!(status, StatusCode::OK, "{item}");
    let text = item["generation"]["processed_output"].as_str().unwrap();
    let sentence = physical_sentence(&PhysicalInfo {
        data_source: Some(t.data_source.clone()),
        update_frequency: t.update_frequency.clone(),
    })
    .unwrap();
    assert!(text.ends_with(&sentence), "{text}");
    assert!(text.split("\n\n").count() >= 2);
    let prompts = item["trace"]["prompts"].as_array().unwrap();
    assert!(prompts
        .iter()
        .all(|p| p["user_message"].as_str().unwrap().contains("Feeds the quarterly regulatory filing.")));

    let empty = json!({"table_name": "empty_tbl", "data_source": "lakehouse"});
    let (status, body) = call(&app, Method::POST, "/v1/tables/describe", Some(empty)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "nothing_to_describe");
    let missing = json!({"table_name": "zzz", "data_source": "lakehouse"});
    let (status, _) = call(&app, Method::POST, "/v1/tables/describe", Some(missing)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

async fn seed_items(app: &axum::Router, f: &scribe_core::fixtures::Fixture, n: usize) -> Vec<ReviewItem> {
    let mut out = Vec::new();
    for t in f.exact_targets.iter().cycle().take(n) {
        let (status, body) = call(app, Method::POST, "/v1/columns/describe", Some(key_json(&t.query))).await;
        assert_eq!(status, StatusCode::OK);
        out.push(serde_json::from_value(body).unwrap());
    }
    out
}

#[tokio::test]
async fn listing_filters_and_pages() {
    let f = fixture();
    let app = echo_app(&f, Arc::new(ReviewStore::in_memory()));
    let items = seed_items(&app, &f, 5).await;
    for it in &items[..2] {
        let d = decision(&it.generation.processed_output, "accept_as_is", 1);
        let (status, _) = call(&app, Method::POST, &format!("/v1/reviews/{}/decision", it.id), Some(d)).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, pending) = call(&app, Method::GET, "/v1/reviews?status=pending", None).await;
    let ids: Vec<&str> = pending.as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap()).collect();
    assert_eq!(ids, [&items[2].id, &items[3].id, &items[4].id]);
    let (_, all) = call(&app, Method::GET, "/v1/reviews", None).await;
    assert_eq!(all.as_array().unwrap().len(), 5);

    let mut paged = Vec::new();
    for offset in 0..6 {
        let (_, page) = call(&app, Method::GET, &format!("/v1/reviews?limit=1&offset={offset}"), None).await;
        paged.extend(page.as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap().to_string()));
    }
    assert_eq!(paged, items.iter().map(|i| i.id.clone()).collect::<Vec<_>>());

    let (status, body) = call(&app, Method::GET, &format!("/v1/reviews/{}", items[3].id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["id"], items[3].id.as_str());
    let (status, _) = call(&app, Method::GET, "/v1/reviews/rev-99999999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/v1/reviews?status=bogus", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn decisions_score_and_conflict() {
    let f = fixture();
    let app = echo_app(&f, Arc::new(ReviewStore::in_memory()));
    let items = seed_items(&app, &f, 3).await;
    let uri = |i: &ReviewItem| format!("/v1/reviews/{}/decision", i.id);

    let text = items[0].generation.processed_output.clone();
    let (status, body) = call(&app, Method::POST, &uri(&items[0]), Some(decision(&text, "accept_as_is", 1))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "decided");
    assert_eq!(body["version"], 2);
    assert_eq!(body["feedback"]["rouge_vs_generation"]["f1"], 1.0);
    assert!((body["feedback"]["embed_vs_generation"]["f1"].as_f64().unwrap() - 1.0).abs() < 1e-6);

    let (status, body) = call(&app, Method::POST, &uri(&items[0]), Some(decision(&text, "accept_as_is", 2))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "already_decided");

    let mut words: Vec<String> = items[1].generation.processed_output.split(' ').map(String::from).collect();
    words[0] = "Edited".into();
    let edited = words.join(" ");
    let (status, body) = call(&app, Method::POST, &uri(&items[1]), Some(decision(&edited, "minor_edit", 1))).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["feedback"]["rouge_vs_generation"]["f1"].as_f64().unwrap() < 1.0);

    let (status, body) = call(&app, Method::POST, &uri(&items[2]), Some(decision("   ", "major_edit", 1))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_decision");
    let (status, _) = call(&app, Method::POST, &uri(&items[2]), Some(decision("changed", "accept_as_is", 1))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = call(&app, Method::POST, &uri(&items[2]), Some(decision("New text.", "major_edit", 7))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "version_conflict");
    let (status, _) = call(&app, Method::POST, &uri(&items[2]), Some(json!({"label": "major_edit"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::POST, "/v1/reviews/rev-404/decision", Some(decision("x", "major_edit", 1))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_decisions_are_exclusive() {
    let f = fixture();
    let app = echo_app(&f, Arc::new(ReviewStore::in_memory()));
    let items = seed_items(&app, &f, 100).await;
    for item in items {
        let uri = format!("/v1/reviews/{}/decision", item.id);
        let a = decision(&item.generation.processed_output, "accept_as_is", 1);
        let b = decision("A steward rewrite of the text.", "major_edit", 1);
        let (ra, rb) = tokio::join!(
            tokio::spawn({
                let (app, uri) = (app.clone(), uri.clone());
                async move { call(&app, Method::POST, &uri, Some(a)).await.0 }
            }),
            tokio::spawn({
                let (app, uri) = (app.clone(), uri.clone());
                async move { call(&app, Method::POST, &uri, Some(b)).await.0 }
            }),
        );
        let mut codes = [ra.unwrap().as_u16(), rb.unwrap().as_u16()];
        codes.sort();
        assert_eq!(codes, [200, 409], "item {}", item.id);
        let (_, after) = call(&app, Method::GET, &format!("/v1/reviews/{}", item.id), None).await;
        assert_eq!(after["version"], 2);
    }
}

#[tokio::test]
async fn metrics_match_offline_summary_of_export() {
    let f = fixture();
    let app = echo_app(&f, Arc::new(ReviewStore::in_memory()));
    let (_, empty) = call(&app, Method::GET, "/v1/metrics", None).await;
    assert_eq!(empty["records"], 0);

    let items = seed_items(&app, &f, 6).await;
    for (n, it) in items.iter().enumerate() {
        let text = &it.generation.processed_output;
        let d = match n % 3 {
            0 => decision(text, "accept_as_is", 1),
            1 => decision(&format!("{text} Extra words."), "minor_edit", 1),
            _ => decision("Completely different wording here.", "major_edit", 1),
        };
        let (status, _) = call(&app, Method::POST, &format!("/v1/reviews/{}/decision", it.id), Some(d)).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, served) = call(&app, Method::GET, "/v1/metrics", None).await;
    let (status, export) = call(&app, Method::GET, "/v1/export/feedback", None).await;
    assert_eq!(status, StatusCode::OK);
    let records: Vec<FeedbackRecord> = export
        .as_str()
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 6);
    let copies: Vec<_> = items.iter().filter_map(|i| i.copy_instance()).collect();
    let offline = summarize(&records, &copies);
    assert_eq!(served, serde_json::to_value(&offline).unwrap());
    assert!((offline.acceptable_percent - 200.0 / 3.0).abs() < 1e-9);
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let f = fixture();
    let state = AppState::new(Some(engine_with(&f, Arc::new(scribe_core::gateway::EchoMock))), Arc::new(ReviewStore::in_memory()))
        .with_bearer_token(Some("s3cret".into()));
    let app = router(state);
    let (status, _) = call_raw(&app, Method::GET, "/v1/metrics", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call_raw(&app, Method::GET, "/v1/metrics", None, Some("wrong")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call_raw(&app, Method::GET, "/v1/metrics", None, Some("s3cret")).await;
    assert_eq!(status, StatusCode::OK);
}
