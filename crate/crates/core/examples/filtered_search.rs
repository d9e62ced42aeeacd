//! Metadata-filtered search: the filter selects candidates, then vectors
//! are ranked among them.

use qxdb::engine::{Database, EngineOptions, Filter, Predicate};
use qxdb::types::{CollectionConfig, DistanceMetric, Entity, MetadataValue};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> qxdb::Result<()> {
    let db = Database::in_memory(EngineOptions::default());
    db.create_collection(CollectionConfig::new("shop", 16).metric(DistanceMetric::Euclidean))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let colors = ["red", "green", "blue"];
    let items = (0..2_000u64)
        .map(|id| {
            let v: Vec<f32> = (0..16).map(|_| rng.random::<f32>()).collect();
            Entity::new(id, v)
                .with_metadata("color", colors[id as usize % 3])
                .with_metadata("price", (id % 100) as i64)
        })
        .collect();
    db.upsert("shop", items)?;

    let filter = Filter::new(vec![
        Predicate::eq("color", "red"),
        Predicate::range("price", Some(MetadataValue::Int(10)), Some(MetadataValue::Int(20))),
    ]);
    let json = serde_json::to_string(&filter).unwrap();
    println!("filter: {json}");

    let query: Vec<f32> = (0..16).map(|_| rng.random::<f32>()).collect();
    let result = db.mevs_query("shop", &filter, &query, 5, None)?;
    let metadata = db.metadata("shop", &result.ids())?;
    for (hit, meta) in result.hits.iter().zip(metadata) {
        let meta = meta.unwrap();
        println!("id={} distance={:.4} color={:?} price={:?}", hit.id, hit.distance, meta["color"], meta["price"]);
    }

    let any = Filter::new(vec![Predicate::any_of("color", ["green", "blue"])]);
    println!("green or blue: {} entities", db.filter_ids("shop", &any)?.len());
    Ok(())
}
