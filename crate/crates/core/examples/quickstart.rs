//! Create a collection, insert a few entities and query it.

use qxdb::engine::{Database, EngineOptions};
use qxdb::types::{CollectionConfig, DistanceMetric, Entity};

fn main() -> qxdb::Result<()> {
    let db = Database::in_memory(EngineOptions::default());
    db.create_collection(CollectionConfig::new("docs", 3).metric(DistanceMetric::Cosine))?;

    let report = db.upsert(
        "docs",
        vec![
            Entity::new(1, vec![1.0, 0.0, 0.0]).with_metadata("title", "east"),
            Entity::new(2, vec![0.0, 1.0, 0.0]).with_metadata("title", "north"),
            Entity::new(3, vec![0.7, 0.7, 0.0]).with_metadata("title", "north-east"),
        ],
    )?;
    println!("inserted {} replaced {}", report.inserted, report.replaced);

    let result = db.vector_query("docs", &[0.9, 0.1, 0.0], 2, None)?;
    for hit in &result.hits {
        println!("id={} distance={:.4}", hit.id, hit.distance);
    }
    assert_eq!(result.ids(), vec![1, 3]);

    assert_eq!(db.delete("docs", &[1])?, 1);
    let result = db.vector_query("docs", &[0.9, 0.1, 0.0], 2, None)?;
    assert_eq!(result.ids(), vec![3, 2]);
    println!("after delete: {:?}", result.ids());
    Ok(())
}
