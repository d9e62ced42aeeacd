//! Benchmark harness: dataset loading, ground truth, accuracy metrics and
//! timed runs against an in-memory engine.

pub mod dataset;
pub mod metrics;
mod runner;

pub use dataset::{
    compute_ground_truth, load_fvecs, load_ivecs, write_fvecs, write_ivecs, Block, Dataset, GroundTruthSource, IntMatrix,
    VectorBlock,
};
pub use metrics::{last_distances_ratio, mean_fraction_returned, mean_recall, recall_at_k, DistanceRatio};
pub use runner::{run_benchmark, run_on, BenchConfig, BenchReport, EfReport, Thresholds};
