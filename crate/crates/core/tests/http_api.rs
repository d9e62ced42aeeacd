use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use qxdb::engine::{Database, EngineOptions, Filter, Predicate, UpsertReport};
use qxdb::http::{router, ApiError, SearchResponse, ServiceConfig};
use qxdb::types::{CollectionConfig, DistanceMetric, Entity};
use qxdb::engine::CollectionInfo;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(config: ServiceConfig) -> (Router, Arc<Database>) {
    let db = Arc::new(Database::in_memory(EngineOptions::default()));
    (router(db.clone(), config), db)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, Some(serde_json::to_vec(&body).unwrap())).await;
    (s, if b.is_empty() { Value::Null } else { serde_json::from_slice(&b).unwrap() })
}

#[tokio::test]
async fn put_then_get_round_trips_config() {
    let (app, _) = app(ServiceConfig::default());
    let config = CollectionConfig::new("c1", 8).metric(DistanceMetric::DotProduct).hnsw(12, 80);
    let (s, body) = call_json(&app, Method::PUT, "/collections/c1", serde_json::to_value(&config).unwrap()).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    let (s, body) = call(&app, Method::GET, "/collections/c1", None).await;
    assert_eq!(s, StatusCode::OK);
    let info: CollectionInfo = serde_json::from_slice(&body).unwrap();
    assert_eq!(info.config, config);
    assert_eq!(info.count, 0);

    let (s, body) = call_json(&app, Method::PUT, "/collections/c1", json!({"dim": 8})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::CONFLICT, Some("name-conflict")));
    let (s, _) = call(&app, Method::DELETE, "/collections/c1", None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = call(&app, Method::DELETE, "/collections/c1", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn server_defaults_fill_omitted_hnsw_parameters() {
    let cfg = ServiceConfig {
        default_m: 6,
        default_ef_construction: 30,
        ..ServiceConfig::default()
    };
    let (app, db) = app(cfg);
    let (s, _) = call_json(&app, Method::PUT, "/collections/a", json!({"dim": 4})).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = call_json(&app, Method::PUT, "/collections/b", json!({"dim": 4, "index": {"type": "hnsw", "m": 9}})).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(db.describe("a").unwrap().config, CollectionConfig::new("a", 4).hnsw(6, 30));
    assert_eq!(db.describe("b").unwrap().config, CollectionConfig::new("b", 4).hnsw(9, 30));
}

#[tokio::test]
async fn errors_carry_status_and_code() {
    let (app, _) = app(ServiceConfig::default());
    let q = json!({"vector": [1.0, 2.0], "k": 1});
    let (s, body) = call_json(&app, Method::POST, "/collections/nope/search", q).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown-collection")));

    let (s, body) = call(&app, Method::PUT, "/collections/x", Some(b"{\"dim\": 4,, }".to_vec())).await;
    let err: ApiError = serde_json::from_slice(&body).unwrap();
    assert_eq!((s, err.code.as_str()), (StatusCode::BAD_REQUEST, "malformed-json"));
    assert!(err.message.contains("byte offset 10"), "{}", err.message);

    let (s, body) = call_json(&app, Method::PUT, "/collections/x", json!({"dim": 0})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid-config")));
    let (s, body) = call_json(&app, Method::PUT, "/collections/x", json!({"name": "y", "dim": 2})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid-config")));

    call_json(&app, Method::PUT, "/collections/x", json!({"dim": 2})).await;
    let (s, body) = call_json(&app, Method::POST, "/collections/x/search", json!({"vector": [1.0], "k": 1})).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("dimension-mismatch")));
    let bad_filter = json!({"vector": [1.0, 0.0], "k": 1, "filter": {"must": [{"range": {"field": "p"}}]}});
    let (s, body) = call_json(&app, Method::POST, "/collections/x/search", bad_filter).await;
    assert_eq!((s, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid-filter")));

    let (s, body) = call(&app, Method::GET, "/nowhere", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["code"], "not-found");
    let (s, body) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!((s, body.as_slice()), (StatusCode::OK, b"ok".as_slice()));
}

#[tokio::test]
async fn body_limit_is_enforced() {
    let (app, _) = app(ServiceConfig {
        max_body_bytes: 64,
        ..ServiceConfig::default()
    });
    let big = json!({"dim": 2, "metric": "cosine", "quantization": {"type": "none"}, "index": {"type": "flat"}, "name": "x"});
    let (s, _) = call_json(&app, Method::PUT, "/collections/x", big).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn upsert_reports_per_item_and_search_matches_engine() {
    let (app, _) = app(ServiceConfig::default());
    let oracle = Database::in_memory(EngineOptions::default());
    let config = CollectionConfig::new("p", 6).metric(DistanceMetric::Euclidean).hnsw(8, 50);
    call_json(&app, Method::PUT, "/collections/p", serde_json::to_value(&config).unwrap()).await;
    oracle.create_collection(config).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points: Vec<Entity> = (0..100u64)
        .map(|id| Entity::new(id, (0..6).map(|_| rng.random::<f32>()).collect::<Vec<_>>()).with_metadata("b", (id % 4) as i64))
        .collect();
    let (s, body) = call_json(&app, Method::POST, "/collections/p/points", json!({ "points": points })).await;
    assert_eq!(s, StatusCode::OK);
    let report: UpsertReport = serde_json::from_value(body).unwrap();
    assert_eq!(report, oracle.upsert("p", points.clone()).unwrap());

    let mixed = json!({"points": [
        {"id": 1, "vector": [1, 1, 1, 1, 1, 1]},
        {"id": 500, "vector": [1, 1]},
        {"id": 501, "vector": [0, 0, 0, 0, 0, 0]}
    ]});
    let (_, body) = call_json(&app, Method::POST, "/collections/p/points", mixed).await;
    let counts = ["inserted", "replaced", "failed"].map(|f| body[f].as_u64().unwrap());
    assert_eq!(counts, [1, 1, 1]);
    assert_eq!(body["items"][1]["error"]["code"], "dimension-mismatch");
    oracle.upsert("p", vec![Entity::new(1, vec![1.0; 6]), Entity::new(501, vec![0.0; 6])]).unwrap();

    let (_, body) = call_json(&app, Method::POST, "/collections/p/points/delete", json!({"ids": [2, 3, 9999]})).await;
    assert_eq!(body["deleted"], 2);
    oracle.delete("p", &[2, 3, 9999]).unwrap();

    let filter = Filter::new(vec![Predicate::eq("b", 1i64)]);
    for _ in 0..10 {
        let q: Vec<f32> = (0..6).map(|_| rng.random()).collect();
        let (_, body) = call_json(&app, Method::POST, "/collections/p/search", json!({"vector": q, "k": 5})).await;
        let got: SearchResponse = serde_json::from_value(body).unwrap();
        let want = oracle.vector_query("p", &q, 5, None).unwrap();
        assert_eq!(got.hits.iter().map(|h| (h.id, h.distance)).collect::<Vec<_>>(), want.hits.iter().map(|h| (h.id, h.distance)).collect::<Vec<_>>());
        assert!(got.hits.iter().all(|h| h.metadata.is_none()));

        let body = json!({"vector": q, "k": 5, "ef": 20, "filter": filter, "with_metadata": true});
        let (_, body) = call_json(&app, Method::POST, "/collections/p/search", body).await;
        let got: SearchResponse = serde_json::from_value(body).unwrap();
        let want = oracle.mevs_query("p", &filter, &q, 5, Some(20)).unwrap();
        assert_eq!(got.hits.iter().map(|h| h.id).collect::<Vec<_>>(), want.ids());
        assert!(got.hits.iter().all(|h| h.metadata.as_ref().unwrap()["b"] == 1i64.into()));
    }

    let (_, body) = call(&app, Method::GET, "/stats", None).await;
    let stats: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(stats["collections"]["p"]["count"], 99);
}
