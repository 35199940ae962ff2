mod common;

use std::io::Write;
use std::sync::Arc;

use axum::http::{Method, StatusCode};

use common::*;
use scribe_service::store::{ListQuery, ReviewStatus, StoreError};
use scribe_service::ReviewStore;

#[tokio::test]
async fn decided_items_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reviews.journal");
    let f = fixture();
    let before = {
        let store = Arc::new(ReviewStore::open(&path).unwrap());
        let app = echo_app(&f, store.clone());
        for t in f.exact_targets.iter().take(4) {
            let key = serde_json::to_value(&t.query).unwrap();
            let (status, _) = call(&app, Method::POST, "/v1/columns/describe", Some(key)).await;
            assert_eq!(status, StatusCode::OK);
        }
        let first = store.get("rev-00000001").unwrap();
        let d = decision(&first.generation.processed_output, "accept_as_is", 1);
        let (status, _) = call(&app, Method::POST, "/v1/reviews/rev-00000001/decision", Some(d)).await;
        assert_eq!(status, StatusCode::OK);
        store.list(ListQuery::default())
    };

    let reopened = Arc::new(ReviewStore::open(&path).unwrap());
    assert_eq!(reopened.list(ListQuery::default()), before);
    let decided = reopened.get("rev-00000001").unwrap();
    assert_eq!(decided.status, ReviewStatus::Decided);
    assert_eq!(decided.version, 2);
    assert!(decided.decision.is_some());

    // New ids continue after the replayed ones.
    let app = echo_app(&f, reopened.clone());
    let key = serde_json::to_value(&f.exact_targets[5].query).unwrap();
    let (_, item) = call(&app, Method::POST, "/v1/columns/describe", Some(key)).await;
    assert_eq!(item["id"], "rev-00000005");
    let (status, _) = call(&app, Method::POST, "/v1/reviews/rev-00000001/decision", Some(decision("x", "major_edit", 2))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn torn_tail_is_truncated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reviews.journal");
    let f = fixture();
    {
        let store = Arc::new(ReviewStore::open(&path).unwrap());
        let app = echo_app(&f, store);
        let key = serde_json::to_value(&f.exact_targets[0].query).unwrap();
        call(&app, Method::POST, "/v1/columns/describe", Some(key)).await;
    }
    let good = std::fs::metadata(&path).unwrap().len();
    let mut file = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    file.write_all(&500u32.to_le_bytes()).unwrap();
    file.write_all(b"{\"id\":").unwrap();
    drop(file);

    let store = ReviewStore::open(&path).unwrap();
    assert_eq!(store.len(), 1);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), good);
    drop(store);
    assert_eq!(ReviewStore::open(&path).unwrap().len(), 1);
}

#[test]
fn corrupt_record_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reviews.journal");
    let mut bytes = 4u32.to_le_bytes().to_vec();
    bytes.extend_from_slice(b"nope");
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(ReviewStore::open(&path), Err(StoreError::Corrupt { offset: 0, .. })));
}
