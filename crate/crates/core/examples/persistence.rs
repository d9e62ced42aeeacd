//! Write to an on-disk database, close it and reopen it.

use qxdb::engine::{Database, EngineOptions};
use qxdb::types::{CollectionConfig, DistanceMetric, Entity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> qxdb::Result<()> {
    let root = std::env::temp_dir().join(format!("qxdb-persistence-{}", std::process::id()));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let query: Vec<f32> = (0..8).map(|_| rng.random()).collect();

    let before = {
        let db = Database::open(&root, EngineOptions::default())?;
        db.create_collection(CollectionConfig::new("notes", 8).metric(DistanceMetric::Euclidean))?;
        let items = (0..500u64)
            .map(|id| Entity::new(id, (0..8).map(|_| rng.random::<f32>()).collect::<Vec<_>>()))
            .collect();
        db.upsert("notes", items)?;
        let r = db.vector_query("notes", &query, 5, None)?;
        db.close()?;
        r
    };

    let db = Database::open(&root, EngineOptions::default())?;
    let after = db.vector_query("notes", &query, 5, None)?;
    println!("collections {:?}, {} entities", db.collection_names(), db.describe("notes")?.count);
    println!("before {:?}\nafter  {:?}", before.ids(), after.ids());
    assert_eq!(before, after);
    assert!(db.audit("notes")?.is_consistent());
    drop(db);
    std::fs::remove_dir_all(&root).ok();
    Ok(())
}
