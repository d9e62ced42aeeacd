//! Start the HTTP service on a free port and drive it with a client.

use std::sync::Arc;

use qxdb::engine::{Database, EngineOptions};
use qxdb::http::{serve, SearchResponse, ServiceConfig};
use serde_json::json;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let db = Arc::new(Database::in_memory(EngineOptions::default()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, db, ServiceConfig::default(), async {
        stopped.await.ok();
    }));

    let client = reqwest::Client::new();
    let r = client
        .put(format!("{base}/collections/pets"))
        .json(&json!({"dim": 2, "metric": "euclidean", "index": {"type": "flat"}}))
        .send()
        .await?;
    println!("create: {}", r.status());

    let points = json!({"points": [
        {"id": 1, "vector": [0.0, 0.0], "metadata": {"kind": "cat"}},
        {"id": 2, "vector": [1.0, 0.0], "metadata": {"kind": "dog"}},
        {"id": 3, "vector": [0.0, 2.0], "metadata": {"kind": "cat"}}
    ]});
    let r = client.post(format!("{base}/collections/pets/points")).json(&points).send().await?;
    println!("upsert: {}", r.text().await?);

    let search = json!({
        "vector": [0.9, 0.1], "k": 2, "with_metadata": true,
        "filter": {"must": [{"eq": {"field": "kind", "value": "cat"}}]}
    });
    let r: SearchResponse = client.post(format!("{base}/collections/pets/search")).json(&search).send().await?.json().await?;
    for h in &r.hits {
        println!("id={} distance={:.3} metadata={:?}", h.id, h.distance, h.metadata);
    }

    let r = client.post(format!("{base}/collections/nope/search")).json(&search).send().await?;
    println!("unknown collection: {} {}", r.status(), r.text().await?);

    stop.send(()).ok();
    server.await??;
    Ok(())
}
