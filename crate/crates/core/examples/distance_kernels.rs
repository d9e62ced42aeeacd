//! Pairwise and blocked distance kernels for each metric.

use qxdb::distance::{batch_distances, distance};
use qxdb::types::DistanceMetric;

fn main() -> qxdb::Result<()> {
    let q = [1.0f32, 2.0, 3.0];
    let block = [1.0f32, 2.0, 3.0, -1.0, 0.0, 0.5, 3.0, 2.0, 1.0];
    for metric in [DistanceMetric::Cosine, DistanceMetric::Euclidean, DistanceMetric::DotProduct] {
        let batch = batch_distances(&q, &block, metric)?;
        let single: Vec<f32> = block.chunks(3).map(|r| distance(&q, r, metric)).collect::<Result<_, _>>()?;
        println!("{metric:<12} batch {batch:?}  single {single:?}");
    }
    Ok(())
}
