use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, GroundTruthSource};
use super::metrics::{last_distances_ratio, mean_fraction_returned, mean_recall};
use crate::distance::DistanceKernel;
use crate::engine::{Database, EngineOptions};
use crate::error::{Error, Result};
use crate::index::{prepare_vector, SearchResult};
use crate::types::{CollectionConfig, DistanceMetric, Entity, IndexChoice, QuantizationMode};

const COLLECTION: &str = "bench";
const INSERT_BATCH: usize = 10_000;

/// Caps applied to a dataset known by name unless `full` is set.
fn preset_limits(name: &str) -> (Option<usize>, Option<usize>) {
    match name {
        "sift" => (Some(10_000), Some(100)),
        _ => (None, None),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// A dataset directory, or a name looked up under `data_dir`.
    pub dataset: String,
    pub data_dir: PathBuf,
    pub metric: DistanceMetric,
    pub index: IndexChoice,
    pub quantization: QuantizationMode,
    pub ef: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    /// Ignore per-dataset subset caps.
    pub full: bool,
    pub max_train: Option<usize>,
    pub max_queries: Option<usize>,
    /// Search threads; 1 keeps timings comparable.
    pub parallel: usize,
    pub out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dataset: String::new(),
            data_dir: PathBuf::from("data"),
            metric: DistanceMetric::Euclidean,
            index: IndexChoice::default(),
            quantization: QuantizationMode::None,
            ef: vec![64],
            k: 10,
            seed: 42,
            full: false,
            max_train: None,
            max_queries: None,
            parallel: 1,
            out: None,
        }
    }
}

impl BenchConfig {
    pub fn dataset_dir(&self) -> Result<PathBuf> {
        let direct = Path::new(&self.dataset);
        let dir = if direct.is_dir() { direct.to_path_buf() } else { self.data_dir.join(&self.dataset) };
        if !dir.is_dir() {
            return Err(Error::io(
                &dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        Ok(dir)
    }

    /// Effective `(max_train, max_queries)`.
    pub fn limits(&self, dir: &Path) -> (Option<usize>, Option<usize>) {
        if self.full {
            return (self.max_train, self.max_queries);
        }
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let (t, q) = preset_limits(name);
        (self.max_train.or(t), self.max_queries.or(q))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfReport {
    pub ef: usize,
    pub search_time_s: f64,
    pub qps: f64,
    pub recall: f64,
    pub mean_fraction_returned: f64,
    pub last_distances_ratio: f64,
    /// Queries left out of the ratio (zero true distance).
    pub ratio_excluded: usize,
    pub mean_distance_evaluations: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset: String,
    pub dataset_path: String,
    pub train_count: usize,
    pub query_count: usize,
    pub dim: usize,
    pub ground_truth: GroundTruthSource,
    pub metric: DistanceMetric,
    pub index: IndexChoice,
    pub quantization: QuantizationMode,
    pub k: usize,
    pub seed: u64,
    pub parallel: usize,
    pub construction_time_s: f64,
    pub insertion_time_s: f64,
    pub training_time_s: f64,
    /// Keyed by ef.
    pub ef: BTreeMap<usize, EfReport>,
}

/// Acceptance thresholds applied by `--assert`, to every ef block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub min_recall: f64,
    pub max_ratio: f64,
    pub min_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_recall: 0.97,
            max_ratio: 1.01,
            min_fraction: 1.0,
        }
    }
}

impl BenchReport {
    /// Human-readable failures; empty when every ef block passes.
    pub fn check(&self, t: &Thresholds) -> Vec<String> {
        let mut out = Vec::new();
        for (ef, r) in &self.ef {
            if r.recall < t.min_recall {
                out.push(format!("ef={ef}: recall {:.4} < {}", r.recall, t.min_recall));
            }
            if r.last_distances_ratio > t.max_ratio {
                out.push(format!("ef={ef}: last distances ratio {:.4} > {}", r.last_distances_ratio, t.max_ratio));
            }
            if r.mean_fraction_returned < t.min_fraction {
                out.push(format!(
                    "ef={ef}: mean fraction returned {:.4} < {}",
                    r.mean_fraction_returned, t.min_fraction
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn table(&self) -> String {
        let index = match self.index {
            IndexChoice::Flat => "flat".to_string(),
            IndexChoice::Hnsw { m, ef_construction } => format!("hnsw M={m} ef_construction={ef_construction}"),
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} ({} train / {} queries, d={}, {}, ground truth {:?}), {index}, k={}",
            self.dataset, self.train_count, self.query_count, self.dim, self.metric, self.ground_truth, self.k
        );
        let head: Vec<String> = self.ef.keys().map(|ef| format!("ef={ef}")).collect();
        let _ = writeln!(s, "{:<34}{}", "Metric", head.iter().map(|h| format!("{h:>12}")).collect::<String>());
        let mut row = |label: &str, f: &dyn Fn(&EfReport) -> String| {
            let cells: String = self.ef.values().map(|r| format!("{:>12}", f(r))).collect();
            let _ = writeln!(s, "{label:<34}{cells}");
        };
        let construction = self.construction_time_s;
        let insertion = self.insertion_time_s;
        row("Construction Time (s)", &|_| format!("{construction:.3}"));
        row("Insertion Time (s)", &|_| format!("{insertion:.2}"));
        row("Search Time (s)", &|r| format!("{:.3}", r.search_time_s));
        row("Recall Rate", &|r| format!("{:.4}", r.recall));
        row("Mean Fraction of Neighbors Returned", &|r| format!("{:.4}", r.mean_fraction_returned));
        row("Last Distances Ratio", &|r| format!("{:.4}", r.last_distances_ratio));
        row("Queries per Second", &|r| format!("{:.1}", r.qps));
        s
    }
}

/// Loads the dataset, builds the index in an in-memory engine and
/// measures every ef. Writes the JSON report when `config.out` is set.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport> {
    if config.k == 0 || config.ef.is_empty() || config.ef.contains(&0) {
        return Err(Error::InvalidParameter("k and every ef must be >= 1".into()));
    }
    let dir = config.dataset_dir()?;
    let (max_train, max_queries) = config.limits(&dir);
    let dataset = Dataset::load(&dir, config.metric, config.k, max_train, max_queries)?;
    let report = run_on(&dataset, &dir, config)?;
    if let Some(out) = &config.out {
        report.write_json(out)?;
    }
    Ok(report)
}

/// As [`run_benchmark`] on an already loaded dataset.
pub fn run_on(dataset: &Dataset, dir: &Path, config: &BenchConfig) -> Result<BenchReport> {
    let dim = dataset.train.dim;
    let options = EngineOptions {
        seed: config.seed,
        training_threshold: usize::MAX,
        durable_writes: false,
        ..EngineOptions::default()
    };

    let t = Instant::now();
    let db = Database::in_memory(options);
    let mut cc = CollectionConfig::new(COLLECTION, dim).metric(config.metric).quantization(config.quantization);
    cc.index = config.index;
    db.create_collection(cc)?;
    let construction_time_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    for (b, chunk) in dataset.train.data.chunks(INSERT_BATCH * dim).enumerate() {
        let base = (b * INSERT_BATCH) as u64;
        let batch = chunk
            .chunks_exact(dim)
            .enumerate()
            .map(|(i, v)| Entity::new(base + i as u64, v.to_vec()))
            .collect();
        let r = db.upsert(COLLECTION, batch)?;
        if let Some(bad) = r.items.iter().find(|i| i.error.is_some()) {
            let e = bad.error.as_ref().unwrap();
            return Err(Error::InvalidParameter(format!("train vector {} rejected: {}", bad.id, e.message)));
        }
    }
    let insertion_time_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    db.train_quantizer(COLLECTION)?;
    let training_time_s = t.elapsed().as_secs_f64();

    let kernel = DistanceKernel::new(config.metric, dim);
    let k = config.k;
    let truth_ids: Vec<Vec<u64>> = dataset.ground_truth.rows().map(|r| r.iter().take(k).map(|&i| i as u64).collect()).collect();
    let truth_dists: Vec<Vec<f32>> = dataset
        .test
        .rows()
        .zip(&truth_ids)
        .map(|(q, ids)| {
            let q = prepare_vector(kernel, q)?;
            ids.iter()
                .map(|&i| {
                    let v = prepare_vector(kernel, dataset.train.row(i as usize))?;
                    Ok(kernel.report(kernel.pair(&q, &v)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut per_ef = BTreeMap::new();
    for &ef in &config.ef {
        let t = Instant::now();
        let results = search_all(&db, &dataset.test, k, ef, config.parallel.max(1))?;
        let search_time_s = t.elapsed().as_secs_f64();
        let ids: Vec<Vec<u64>> = results.iter().map(SearchResult::ids).collect();
        let dists: Vec<Vec<f32>> = results.iter().map(SearchResult::distances).collect();
        let counts: Vec<usize> = results.iter().map(|r| r.hits.len()).collect();
        let ratio = last_distances_ratio(&dists, &truth_dists, k);
        let n = results.len();
        per_ef.insert(
            ef,
            EfReport {
                ef,
                search_time_s,
                qps: if search_time_s > 0.0 { n as f64 / search_time_s } else { 0.0 },
                recall: mean_recall(&ids, &truth_ids, k),
                mean_fraction_returned: mean_fraction_returned(&counts, k),
                last_distances_ratio: ratio.mean,
                ratio_excluded: ratio.excluded,
                mean_distance_evaluations: results.iter().map(|r| r.stats.distance_evaluations as f64).sum::<f64>()
                    / n.max(1) as f64,
            },
        );
    }

    Ok(BenchReport {
        dataset: dataset.name.clone(),
        dataset_path: dir.display().to_string(),
        train_count: dataset.train.len(),
        query_count: dataset.test.len(),
        dim,
        ground_truth: dataset.ground_truth_source,
        metric: config.metric,
        index: config.index,
        quantization: config.quantization,
        k,
        seed: config.seed,
        parallel: config.parallel.max(1),
        construction_time_s,
        insertion_time_s,
        training_time_s,
        ef: per_ef,
    })
}

fn search_all(db: &Database, queries: &super::dataset::VectorBlock, k: usize, ef: usize, threads: usize) -> Result<Vec<SearchResult>> {
    let rows: Vec<&[f32]> = queries.rows().collect();
    if threads <= 1 {
        return rows.iter().map(|q| db.vector_query(COLLECTION, q, k, Some(ef))).collect();
    }
    let per = rows.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = rows
            .chunks(per)
            .map(|chunk| s.spawn(move || chunk.iter().map(|q| db.vector_query(COLLECTION, q, k, Some(ef))).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(rows.len());
        for h in handles {
            out.extend(h.join().expect("search thread panicked")?);
        }
        Ok(out)
    })
}
