//! Train a PQ codebook, compare asymmetric distances with exact ones, then
//! run a PQ-backed collection that re-ranks its candidates exactly.

use qxdb::distance::euclidean_distance_sq;
use qxdb::engine::{Database, EngineOptions};
use qxdb::quantization::{pq_asymmetric_distance, pq_encode, pq_train_block, DEFAULT_MAX_ITERS};
use qxdb::types::{CollectionConfig, DistanceMetric, Entity, QuantizationMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 32;

fn main() -> qxdb::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f32> = (0..5_000 * DIM).map(|_| rng.random::<f32>()).collect();

    let (codebook, trace) = pq_train_block(&data, DIM, 8, 64, DEFAULT_MAX_ITERS, 1)?;
    let first = &trace.errors[0];
    println!("sub-space 0 k-means error: {:.3} -> {:.3}", first[0], first[first.len() - 1]);

    let query = &data[..DIM];
    let target = &data[DIM..2 * DIM];
    let code = pq_encode(target, &codebook)?;
    println!(
        "exact {:.4}  asymmetric {:.4}  code {:?}",
        euclidean_distance_sq(query, target)?,
        pq_asymmetric_distance(query, &code, &codebook)?,
        code.0
    );

    let db = Database::in_memory(EngineOptions::default());
    let config = CollectionConfig::new("pq", DIM)
        .metric(DistanceMetric::Euclidean)
        .flat()
        .quantization(QuantizationMode::Pq { m: 8, k: 64 });
    db.create_collection(config)?;
    let entities = data.chunks(DIM).enumerate().map(|(i, v)| Entity::new(i as u64, v.to_vec())).collect();
    db.upsert("pq", entities)?;
    println!("quantizer trained: {}", db.describe("pq")?.quantizer_trained);

    let result = db.vector_query("pq", query, 5, None)?;
    println!("top ids {:?}, {} distance evaluations", result.ids(), result.stats.distance_evaluations);
    assert_eq!(result.hits[0].id, 0);
    Ok(())
}
