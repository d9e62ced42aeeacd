//! `.fvecs` / `.ivecs` containers and benchmark datasets.
//!
//! Each record is a little-endian `i32` dimension `d` followed by `d`
//! little-endian `f32` (fvecs) or `i32` (ivecs) values. Every record in a
//! file must share `d`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::index::FlatIndex;
use crate::types::DistanceMetric;

/// Row-major matrix with `dim` columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Block<T> {
    pub dim: usize,
    pub data: Vec<T>,
}

pub type VectorBlock = Block<f32>;
pub type IntMatrix = Block<i32>;

impl<T: Copy> Block<T> {
    pub fn new(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 && !data.is_empty() || dim != 0 && data.len() % dim != 0 {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: dim,
            });
        }
        Ok(Block { dim, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (record, r) in rows.iter().enumerate() {
            if r.len() != dim || dim == 0 {
                return Err(Error::InconsistentDimension {
                    record,
                    expected: dim,
                    found: r.len() as i64,
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Block { dim, data })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// The first `n` rows (all of them if there are fewer).
    pub fn truncated(&self, n: usize) -> Self {
        Block {
            dim: self.dim,
            data: self.data[..n.min(self.len()) * self.dim].to_vec(),
        }
    }
}

fn parse_vecs<T>(bytes: &[u8], decode: fn([u8; 4]) -> T) -> Result<Block<T>> {
    let mut data = Vec::new();
    let mut dim: Option<usize> = None;
    let mut pos = 0;
    let mut record = 0;
    while pos < bytes.len() {
        let rest = bytes.len() - pos;
        if rest < 4 {
            return Err(Error::TrailingGarbage(rest));
        }
        let d = i32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        if d <= 0 || dim.is_some_and(|e| e != d as usize) {
            return Err(Error::InconsistentDimension {
                record,
                expected: dim.unwrap_or(0),
                found: i64::from(d),
            });
        }
        let d = d as usize;
        let body = d * 4;
        if rest - 4 < body {
            return Err(Error::TrailingGarbage(rest));
        }
        if dim.is_none() {
            dim = Some(d);
            data.reserve(bytes.len() / (body + 4) * d);
        }
        data.extend(
            bytes[pos + 4..pos + 4 + body]
                .chunks_exact(4)
                .map(|c| decode(c.try_into().unwrap())),
        );
        pos += 4 + body;
        record += 1;
    }
    Ok(Block {
        dim: dim.unwrap_or(0),
        data,
    })
}

fn write_vecs<T: Copy>(block: &Block<T>, encode: fn(T) -> [u8; 4]) -> Vec<u8> {
    let mut out = Vec::with_capacity(block.len() * (block.dim + 1) * 4);
    for row in block.rows() {
        out.extend_from_slice(&(block.dim as i32).to_le_bytes());
        for &v in row {
            out.extend_from_slice(&encode(v));
        }
    }
    out
}

pub fn parse_fvecs(bytes: &[u8]) -> Result<VectorBlock> {
    parse_vecs(bytes, f32::from_le_bytes)
}

pub fn parse_ivecs(bytes: &[u8]) -> Result<IntMatrix> {
    parse_vecs(bytes, i32::from_le_bytes)
}

pub fn encode_fvecs(block: &VectorBlock) -> Vec<u8> {
    write_vecs(block, f32::to_le_bytes)
}

pub fn encode_ivecs(block: &IntMatrix) -> Vec<u8> {
    write_vecs(block, i32::to_le_bytes)
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<VectorBlock> {
    let path = path.as_ref();
    parse_fvecs(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<IntMatrix> {
    let path = path.as_ref();
    parse_ivecs(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_fvecs(path: impl AsRef<Path>, block: &VectorBlock) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fvecs(block)).map_err(|e| Error::io(path, e))
}

pub fn write_ivecs(path: impl AsRef<Path>, block: &IntMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ivecs(block)).map_err(|e| Error::io(path, e))
}

/// Exact top-`k` train indices for every test row, by ascending distance
/// with ties to the lower index.
pub fn compute_ground_truth(train: &VectorBlock, test: &VectorBlock, k: usize, metric: DistanceMetric) -> Result<IntMatrix> {
    if k == 0 || k > train.len() {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= {} (got {k})", train.len())));
    }
    if test.dim != train.dim && !test.is_empty() {
        return Err(Error::DimensionMismatch {
            field: "test",
            expected: train.dim,
            actual: test.dim,
        });
    }
    let mut flat = FlatIndex::new(metric, train.dim);
    for (i, row) in train.rows().enumerate() {
        flat.insert(i as u64, row)?;
    }
    let mut data = Vec::with_capacity(test.len() * k);
    for q in test.rows() {
        let res = flat.search(q, k, None)?;
        data.extend(res.hits.iter().map(|h| h.id as i32));
    }
    Block::new(k, data)
}

/// Where ground truth came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthSource {
    Shipped,
    Computed,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub train: VectorBlock,
    pub test: VectorBlock,
    /// Row `i` holds true neighbour indices of test row `i`, nearest first.
    pub ground_truth: IntMatrix,
    pub ground_truth_source: GroundTruthSource,
    pub metric: DistanceMetric,
}

/// Locates `*base.fvecs`, `*query.fvecs` and optionally
/// `*groundtruth.ivecs` inside `dir`.
pub fn dataset_files(dir: &Path) -> Result<(PathBuf, PathBuf, Option<PathBuf>)> {
    let mut base = None;
    let mut query = None;
    let mut gt = None;
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if name.ends_with("base.fvecs") {
            base = Some(path);
        } else if name.ends_with("query.fvecs") {
            query = Some(path);
        } else if name.ends_with("groundtruth.ivecs") {
            gt = Some(path);
        }
    }
    let missing = |what: &str| {
        Error::io(
            dir.join(what),
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("no *{what} in directory")),
        )
    };
    Ok((base.ok_or_else(|| missing("base.fvecs"))?, query.ok_or_else(|| missing("query.fvecs"))?, gt))
}

impl Dataset {
    /// Loads a dataset directory, keeping at most `max_train` base vectors
    /// and `max_queries` queries. Ground truth is taken from the shipped
    /// file when it covers `k` and the base set is complete; otherwise it
    /// is recomputed by exact search.
    pub fn load(
        dir: &Path,
        metric: DistanceMetric,
        k: usize,
        max_train: Option<usize>,
        max_queries: Option<usize>,
    ) -> Result<Self> {
        let (base, query, gt) = dataset_files(dir)?;
        let full_train = load_fvecs(&base)?;
        let full_len = full_train.len();
        let train = match max_train {
            Some(m) if m < full_len => full_train.truncated(m),
            _ => full_train,
        };
        let test = load_fvecs(&query)?;
        let test = match max_queries {
            Some(q) => test.truncated(q),
            None => test,
        };
        if test.dim != train.dim {
            return Err(Error::DimensionMismatch {
                field: "query",
                expected: train.dim,
                actual: test.dim,
            });
        }
        let complete_base = train.len() == full_len;
        let shipped = match gt {
            Some(p) if complete_base => {
                let g = load_ivecs(&p)?;
                (g.dim >= k && g.len() >= test.len()).then(|| g.truncated(test.len()))
            }
            _ => None,
        };
        let (ground_truth, ground_truth_source) = match shipped {
            Some(g) => {
                if let Some(bad) = g.data.iter().find(|&&i| i < 0 || i as usize >= train.len()) {
                    return Err(Error::InvalidParameter(format!("ground truth index {bad} out of range")));
                }
                (g, GroundTruthSource::Shipped)
            }
            None => (compute_ground_truth(&train, &test, k, metric)?, GroundTruthSource::Computed),
        };
        Ok(Dataset {
            name: dir.file_name().and_then(|n| n.to_str()).unwrap_or("dataset").to_string(),
            train,
            test,
            ground_truth,
            ground_truth_source,
            metric,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_records() {
        let mut bytes = vec![];
        for row in [[1.0f32, 2.0], [3.0, 4.0]] {
            bytes.extend_from_slice(&2i32.to_le_bytes());
            for v in row {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let b = parse_fvecs(&bytes).unwrap();
        assert_eq!((b.len(), b.dim), (2, 2));
        assert_eq!(b.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn format_errors() {
        let zero = 0i32.to_le_bytes();
        assert!(matches!(parse_fvecs(&zero), Err(Error::InconsistentDimension { record: 0, found: 0, .. })));
        let mut mixed = encode_fvecs(&Block::new(2, vec![1.0, 2.0]).unwrap());
        mixed.extend_from_slice(&encode_fvecs(&Block::new(1, vec![1.0]).unwrap()));
        assert!(matches!(
            parse_fvecs(&mixed),
            Err(Error::InconsistentDimension { record: 1, expected: 2, found: 1 })
        ));
        let mut tail = encode_ivecs(&Block::new(1, vec![7]).unwrap());
        tail.push(0);
        assert!(matches!(parse_ivecs(&tail), Err(Error::TrailingGarbage(1))));
        let short = &encode_fvecs(&Block::new(3, vec![1.0, 2.0, 3.0]).unwrap())[..10];
        assert!(matches!(parse_fvecs(short), Err(Error::TrailingGarbage(10))));
        assert!(parse_fvecs(&[]).unwrap().is_empty());
    }

    #[test]
    fn ground_truth_self_and_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f32>> = (0..100).map(|_| (0..16).map(|_| rng.random()).collect()).collect();
        let block = Block::from_rows(&rows).unwrap();
        let own = compute_ground_truth(&block, &block, 1, DistanceMetric::Euclidean).unwrap();
        assert_eq!(own.data, (0..100).collect::<Vec<i32>>());

        let queries: Vec<Vec<f32>> = (0..20).map(|_| (0..16).map(|_| rng.random()).collect()).collect();
        let gt = compute_ground_truth(&block, &Block::from_rows(&queries).unwrap(), 5, DistanceMetric::Euclidean).unwrap();
        for (qi, q) in queries.iter().enumerate() {
            let mut d: Vec<(f64, i32)> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| ((a - b) as f64).powi(2)).sum(), i as i32))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<i32> = d[..5].iter().map(|x| x.1).collect();
            assert_eq!(gt.row(qi), want.as_slice());
        }
    }

    proptest! {
        #[test]
        fn round_trip(dim in 1usize..20, rows in 0usize..20, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Block::new(dim, (0..dim * rows).map(|_| rng.random::<f32>()).collect()).unwrap();
            prop_assert_eq!(&parse_fvecs(&encode_fvecs(&f)).unwrap().data, &f.data);
            let i = Block::new(dim, (0..dim * rows).map(|_| rng.random::<i32>()).collect()).unwrap();
            prop_assert_eq!(&parse_ivecs(&encode_ivecs(&i)).unwrap().data, &i.data);
        }

        #[test]
        fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = parse_fvecs(&bytes);
        }
    }
}
