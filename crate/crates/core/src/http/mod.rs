//! JSON-over-HTTP API.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | `GET` | `/healthz` | | `200 ok` |
//! | `GET` | `/stats` | | per-collection counts |
//! | `GET` | `/collections` | | collection names |
//! | `PUT` | `/collections/{name}` | [`CreateCollection`] | `201` [`CollectionInfo`] |
//! | `GET` | `/collections/{name}` | | [`CollectionInfo`] |
//! | `DELETE` | `/collections/{name}` | | `204` |
//! | `POST` | `/collections/{name}/points` | [`UpsertRequest`] | [`UpsertReport`] |
//! | `POST` | `/collections/{name}/points/delete` | [`DeleteRequest`] | [`DeleteResponse`] |
//! | `POST` | `/collections/{name}/search` | [`SearchRequest`] | [`SearchResponse`] |
//!
//! Errors are `{"code": ..., "message": ...}` with status 400, 404, 409 or
//! 500.

mod config;

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

pub use config::{ServiceConfig, DEFAULT_MAX_BODY_BYTES, ENV_PREFIX};

use crate::engine::{CollectionInfo, Database, Filter, UpsertReport};
use crate::error::Error;
use crate::index::SearchStats;
use crate::types::{CollectionConfig, DistanceMetric, Entity, IndexChoice, Metadata, QuantizationMode};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

/// Status for each engine error.
pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::UnknownCollection(_) => StatusCode::NOT_FOUND,
        Error::NameConflict(_) | Error::DuplicateId(_) => StatusCode::CONFLICT,
        Error::Io { .. }
        | Error::CorruptRecord { .. }
        | Error::Malformed { .. }
        | Error::VersionMismatch { .. }
        | Error::InconsistentDimension { .. }
        | Error::TrailingGarbage(_)
        | Error::CodeOutOfRange { .. }
        | Error::LengthMismatch { .. }
        | Error::EmptyGraph => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::new(status_for(&e), e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Byte offset of serde_json's 1-based line/column position.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let start = if line <= 1 {
        0
    } else {
        bytes
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == b'\n')
            .nth(line - 2)
            .map_or(bytes.len(), |(i, _)| i + 1)
    };
    (start + column.saturating_sub(1)).min(bytes.len())
}

pub fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| {
        let offset = byte_offset(bytes, e.line(), e.column());
        let code = match e.classify() {
            serde_json::error::Category::Data => "invalid-request",
            _ => "malformed-json",
        };
        ApiError::new(StatusCode::BAD_REQUEST, code, format!("{e} (byte offset {offset})"))
    })
}

/// JSON body with [`ApiError`] rejections.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state).await.map_err(|r| {
            let code = if r.status() == StatusCode::PAYLOAD_TOO_LARGE { "payload-too-large" } else { "bad-request" };
            ApiError::new(r.status(), code, r.body_text())
        })?;
        parse_json(&bytes).map(JsonBody)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IndexSpec {
    Flat,
    Hnsw {
        #[serde(default)]
        m: Option<usize>,
        #[serde(default)]
        ef_construction: Option<usize>,
    },
}

/// Body of `PUT /collections/{name}`. The name comes from the path; a
/// name in the body must agree with it. Omitted HNSW parameters use the
/// server defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateCollection {
    #[serde(default)]
    pub name: Option<String>,
    pub dim: usize,
    #[serde(default)]
    pub metric: DistanceMetric,
    #[serde(default)]
    pub index: Option<IndexSpec>,
    #[serde(default)]
    pub quantization: QuantizationMode,
}

impl From<&CollectionConfig> for CreateCollection {
    fn from(c: &CollectionConfig) -> Self {
        CreateCollection {
            name: Some(c.name.clone()),
            dim: c.dim,
            metric: c.metric,
            index: Some(match c.index {
                IndexChoice::Flat => IndexSpec::Flat,
                IndexChoice::Hnsw { m, ef_construction } => IndexSpec::Hnsw {
                    m: Some(m),
                    ef_construction: Some(ef_construction),
                },
            }),
            quantization: c.quantization,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpsertRequest {
    pub points: Vec<Entity>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeleteRequest {
    pub ids: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeleteResponse {
    pub deleted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub vector: Vec<f32>,
    pub k: usize,
    #[serde(default)]
    pub ef: Option<usize>,
    #[serde(default)]
    pub filter: Option<Filter>,
    #[serde(default)]
    pub with_metadata: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: u64,
    pub distance: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Metadata>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<SearchHit>,
    pub stats: SearchStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub uptime_s: f64,
    pub collections: BTreeMap<String, CollectionInfo>,
}

#[derive(Clone)]
struct AppState {
    db: Arc<Database>,
    config: Arc<ServiceConfig>,
    started: Instant,
}

/// Runs engine work off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> crate::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

async fn healthz() -> &'static str {
    "ok"
}

async fn stats(State(s): State<AppState>) -> ApiResult<Json<StatsResponse>> {
    let db = s.db.clone();
    let collections = blocking(move || {
        db.collection_names()
            .into_iter()
            .filter_map(|n| db.describe(&n).ok().map(|i| (n, i)))
            .map(Ok)
            .collect::<crate::Result<_>>()
    })
    .await?;
    Ok(Json(StatsResponse {
        uptime_s: s.started.elapsed().as_secs_f64(),
        collections,
    }))
}

async fn list_collections(State(s): State<AppState>) -> Json<Vec<String>> {
    Json(s.db.collection_names())
}

async fn create_collection(
    State(s): State<AppState>,
    Path(name): Path<String>,
    JsonBody(body): JsonBody<CreateCollection>,
) -> ApiResult<(StatusCode, Json<CollectionInfo>)> {
    if let Some(n) = &body.name {
        if *n != name {
            return Err(Error::InvalidConfig(format!("body name `{n}` differs from path name `{name}`")).into());
        }
    }
    let index = match body.index {
        Some(IndexSpec::Flat) => IndexChoice::Flat,
        Some(IndexSpec::Hnsw { m, ef_construction }) => IndexChoice::Hnsw {
            m: m.unwrap_or(s.config.default_m),
            ef_construction: ef_construction.unwrap_or(s.config.default_ef_construction),
        },
        None => IndexChoice::Hnsw {
            m: s.config.default_m,
            ef_construction: s.config.default_ef_construction,
        },
    };
    let mut config = CollectionConfig::new(name, body.dim).metric(body.metric).quantization(body.quantization);
    config.index = index;
    let db = s.db.clone();
    let info = blocking(move || db.create_collection(config)).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn describe_collection(State(s): State<AppState>, Path(name): Path<String>) -> ApiResult<Json<CollectionInfo>> {
    Ok(Json(s.db.describe(&name)?))
}

async fn drop_collection(State(s): State<AppState>, Path(name): Path<String>) -> ApiResult<StatusCode> {
    let db = s.db.clone();
    blocking(move || db.drop_collection(&name)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn upsert_points(
    State(s): State<AppState>,
    Path(name): Path<String>,
    JsonBody(body): JsonBody<UpsertRequest>,
) -> ApiResult<Json<UpsertReport>> {
    let db = s.db.clone();
    Ok(Json(blocking(move || db.upsert(&name, body.points)).await?))
}

async fn delete_points(
    State(s): State<AppState>,
    Path(name): Path<String>,
    JsonBody(body): JsonBody<DeleteRequest>,
) -> ApiResult<Json<DeleteResponse>> {
    let db = s.db.clone();
    let deleted = blocking(move || db.delete(&name, &body.ids)).await?;
    Ok(Json(DeleteResponse { deleted }))
}

async fn search(
    State(s): State<AppState>,
    Path(name): Path<String>,
    JsonBody(req): JsonBody<SearchRequest>,
) -> ApiResult<Json<SearchResponse>> {
    let db = s.db.clone();
    let ef = req.ef.or(s.config.default_ef);
    let resp = blocking(move || {
        let result = match &req.filter {
            Some(f) => db.mevs_query(&name, f, &req.vector, req.k, ef)?,
            None => db.vector_query(&name, &req.vector, req.k, ef)?,
        };
        let metadata = if req.with_metadata {
            db.metadata(&name, &result.ids())?
        } else {
            vec![None; result.hits.len()]
        };
        let hits = result
            .hits
            .iter()
            .zip(metadata)
            .map(|(h, metadata)| SearchHit {
                id: h.id,
                distance: h.distance,
                metadata,
            })
            .collect();
        Ok(SearchResponse {
            hits,
            stats: result.stats,
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such route")
}

pub fn router(db: Arc<Database>, config: ServiceConfig) -> Router {
    let limit = config.max_body_bytes;
    let state = AppState {
        db,
        config: Arc::new(config),
        started: Instant::now(),
    };
    Router::new()
        .route("/healthz", get(healthz))
        .route("/stats", get(stats))
        .route("/collections", get(list_collections))
        .route(
            "/collections/{name}",
            put(create_collection).get(describe_collection).delete(drop_collection),
        )
        .route("/collections/{name}/points", post(upsert_points))
        .route("/collections/{name}/points/delete", post(delete_points))
        .route("/collections/{name}/search", post(search))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then waits for in-flight requests.
pub async fn serve(
    listener: TcpListener,
    db: Arc<Database>,
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(db, config)).with_graceful_shutdown(shutdown).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_follow_lines() {
        let s = b"{\n  \"a\": ,\n}";
        let e = serde_json::from_slice::<serde_json::Value>(s).unwrap_err();
        let off = byte_offset(s, e.line(), e.column());
        assert_eq!(s[off], b',');
        assert_eq!(byte_offset(b"abc", 1, 1), 0);
        assert_eq!(byte_offset(b"abc", 1, 99), 3);
    }

    #[test]
    fn every_error_maps_to_one_class() {
        assert_eq!(status_for(&Error::UnknownCollection("x".into())), StatusCode::NOT_FOUND);
        assert_eq!(status_for(&Error::NameConflict("x".into())), StatusCode::CONFLICT);
        assert_eq!(status_for(&Error::InvalidFilter("x".into())), StatusCode::BAD_REQUEST);
        assert_eq!(status_for(&Error::ZeroVector), StatusCode::BAD_REQUEST);
        assert_eq!(status_for(&Error::CorruptRecord { offset: 1 }), StatusCode::INTERNAL_SERVER_ERROR);
        let e = ApiError::from(Error::UnknownCollection("x".into()));
        assert_eq!((e.status, e.code.as_str()), (404, "unknown-collection"));
    }

    #[test]
    fn request_shapes() {
        let r: SearchRequest = parse_json(br#"{"vector":[1,2],"k":3,"filter":{"must":[{"eq":{"field":"c","value":"r"}}]}}"#).unwrap();
        assert_eq!(r.k, 3);
        assert!(!r.with_metadata);
        assert!(r.filter.is_some());
        let e = parse_json::<SearchRequest>(br#"{"vector":[1,2],"k":3,"extra":1}"#).unwrap_err();
        assert_eq!(e.code, "invalid-request");
        let e = parse_json::<SearchRequest>(b"{\"vector\":[1,").unwrap_err();
        assert_eq!(e.code, "malformed-json");
        assert!(e.message.contains("byte offset 12"), "{}", e.message);
    }
}
