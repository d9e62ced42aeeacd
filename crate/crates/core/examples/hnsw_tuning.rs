//! Recall and work per query of an HNSW graph as ef grows, against exact
//! search.

use std::time::Instant;

use qxdb::index::{FlatIndex, HnswIndex, HnswParams};
use qxdb::types::DistanceMetric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 32;
const K: usize = 10;

fn main() -> qxdb::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut flat = FlatIndex::new(DistanceMetric::Euclidean, DIM);
    let params = HnswParams { m: 12, ef_construction: 100, seed: 1 };
    let mut hnsw = HnswIndex::new(DistanceMetric::Euclidean, DIM, params)?;
    let t = Instant::now();
    for id in 0..10_000u64 {
        let v: Vec<f32> = (0..DIM).map(|_| rng.random()).collect();
        flat.insert(id, &v)?;
        hnsw.insert(id, &v)?;
    }
    println!("built in {:.2?}, layers {:?}", t.elapsed(), hnsw.layer_sizes());

    let queries: Vec<Vec<f32>> = (0..200).map(|_| (0..DIM).map(|_| rng.random()).collect()).collect();
    let truth: Vec<Vec<u64>> = queries.iter().map(|q| flat.search(q, K, None).map(|r| r.ids())).collect::<Result<_, _>>()?;
    for ef in [10, 20, 40, 80, 160] {
        let mut found = 0;
        let mut evals = 0;
        for (q, t) in queries.iter().zip(&truth) {
            let r = hnsw.search(q, K, ef)?;
            found += r.ids().iter().filter(|id| t.contains(id)).count();
            evals += r.stats.distance_evaluations;
        }
        println!(
            "ef={ef:<4} recall {:.3}  distance evaluations/query {}",
            found as f64 / (K * queries.len()) as f64,
            evals / queries.len() as u64
        );
    }
    Ok(())
}
