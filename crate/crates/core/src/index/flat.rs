//! Exact k-NN by linear scan over a contiguous row-major block.

use std::collections::{HashMap, HashSet};

use crate::distance::DistanceKernel;
use crate::error::{Error, Result};
use crate::index::result::{Hit, SearchResult, SearchStats, TopK};
use crate::index::prepare_vector;
use crate::types::DistanceMetric;

/// Rows scored per call into the blocked kernel.
const SCAN_CHUNK: usize = 256;

#[derive(Clone, Debug)]
pub struct FlatIndex {
    kernel: DistanceKernel,
    ids: Vec<u64>,
    vectors: Vec<f32>,
    rows: HashMap<u64, usize>,
}

impl FlatIndex {
    pub fn new(metric: DistanceMetric, dim: usize) -> Self {
        FlatIndex {
            kernel: DistanceKernel::new(metric, dim),
            ids: Vec::new(),
            vectors: Vec::new(),
            rows: HashMap::new(),
        }
    }

    pub fn metric(&self) -> DistanceMetric {
        self.kernel.metric
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.rows.contains_key(&id)
    }

    /// Ids in row order.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Stored (prepared) vector of `id`; unit length for cosine indexes.
    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        self.rows.get(&id).map(|&r| self.row(r))
    }

    fn row(&self, r: usize) -> &[f32] {
        &self.vectors[r * self.kernel.dim..(r + 1) * self.kernel.dim]
    }

    pub fn insert(&mut self, id: u64, vector: &[f32]) -> Result<()> {
        if self.rows.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let v = prepare_vector(self.kernel, vector)?;
        self.rows.insert(id, self.ids.len());
        self.ids.push(id);
        self.vectors.extend_from_slice(&v);
        Ok(())
    }

    /// Swap-removes `id`; row order is not preserved.
    pub fn remove(&mut self, id: u64) -> bool {
        let Some(r) = self.rows.remove(&id) else {
            return false;
        };
        let dim = self.kernel.dim;
        let last = self.ids.len() - 1;
        if r != last {
            self.ids.swap(r, last);
            let (head, tail) = self.vectors.split_at_mut(last * dim);
            head[r * dim..(r + 1) * dim].copy_from_slice(&tail[..dim]);
            self.rows.insert(self.ids[r], r);
        }
        self.ids.pop();
        self.vectors.truncate(last * dim);
        true
    }

    pub fn search(&self, query: &[f32], k: usize, allowed: Option<&HashSet<u64>>) -> Result<SearchResult> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        let q = prepare_vector(self.kernel, query)?;
        let mut top = TopK::new(k);
        let mut stats = SearchStats::default();
        match allowed {
            Some(set) if set.len() < self.ids.len() / 4 => {
                for &id in set {
                    if let Some(&r) = self.rows.get(&id) {
                        top.push(self.kernel.pair(&q, self.row(r)), id);
                        stats.distance_evaluations += 1;
                    }
                }
            }
            _ => {
                let dim = self.kernel.dim;
                let mut buf = vec![0.0f32; SCAN_CHUNK];
                for (c, block) in self.vectors.chunks(SCAN_CHUNK * dim).enumerate() {
                    let n = block.len() / dim;
                    self.kernel.rows(&q, block, &mut buf[..n]);
                    stats.distance_evaluations += n as u64;
                    for (j, &d) in buf[..n].iter().enumerate() {
                        let id = self.ids[c * SCAN_CHUNK + j];
                        if allowed.is_none_or(|s| s.contains(&id)) {
                            top.push(d, id);
                        }
                    }
                }
            }
        }
        stats.visited_nodes = stats.distance_evaluations;
        let hits = top
            .into_sorted()
            .into_iter()
            .map(|s| Hit {
                id: s.key,
                distance: self.kernel.report(s.dist),
            })
            .collect();
        Ok(SearchResult { hits, stats })
    }

    pub(crate) fn raw_parts(&self) -> (&[u64], &[f32]) {
        (&self.ids, &self.vectors)
    }

    /// Rebuilds from stored rows; vectors are taken as already prepared.
    pub(crate) fn from_raw_parts(metric: DistanceMetric, dim: usize, ids: Vec<u64>, vectors: Vec<f32>) -> Result<Self> {
        if vectors.len() != ids.len() * dim {
            return Err(Error::LengthMismatch {
                left: vectors.len(),
                right: ids.len() * dim,
            });
        }
        let mut rows = HashMap::with_capacity(ids.len());
        for (r, &id) in ids.iter().enumerate() {
            if rows.insert(id, r).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(FlatIndex {
            kernel: DistanceKernel::new(metric, dim),
            ids,
            vectors,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_checked_example() {
        let mut idx = FlatIndex::new(DistanceMetric::Euclidean, 2);
        idx.insert(1, &[0.0, 0.0]).unwrap();
        idx.insert(2, &[1.0, 0.0]).unwrap();
        idx.insert(3, &[5.0, 5.0]).unwrap();
        let res = idx.search(&[0.9, 0.0], 2, None).unwrap();
        assert_eq!(res.ids(), vec![2, 1]);
        assert!((res.hits[0].distance - 0.1).abs() < 1e-6);
        let all = idx.search(&[0.9, 0.0], 10, None).unwrap();
        assert_eq!(all.ids(), vec![2, 1, 3]);
    }

    #[test]
    fn insert_rules() {
        let mut idx = FlatIndex::new(DistanceMetric::Euclidean, 2);
        idx.insert(9, &[1.0, 2.0]).unwrap();
        assert_eq!(idx.len(), 1);
        assert!(matches!(idx.insert(9, &[1.0, 2.0]), Err(Error::DuplicateId(9))));
        assert!(matches!(idx.insert(10, &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(idx.search(&[1.0], 1, None).is_err());
        assert!(idx.search(&[1.0, 1.0], 0, None).is_err());
    }

    #[test]
    fn ties_go_to_lower_id() {
        let mut idx = FlatIndex::new(DistanceMetric::Euclidean, 1);
        for id in [7, 3, 5] {
            idx.insert(id, &[1.0]).unwrap();
        }
        assert_eq!(idx.search(&[0.0], 3, None).unwrap().ids(), vec![3, 5, 7]);
    }

    #[test]
    fn swap_remove_keeps_rows_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut idx = FlatIndex::new(DistanceMetric::Euclidean, 3);
        let mut kept = HashMap::new();
        for id in 0..50u64 {
            let v: Vec<f32> = (0..3).map(|_| rng.random()).collect();
            idx.insert(id, &v).unwrap();
            kept.insert(id, v);
        }
        for id in (0..50u64).step_by(3) {
            assert!(idx.remove(id));
            kept.remove(&id);
        }
        assert!(!idx.remove(0));
        assert_eq!(idx.len(), kept.len());
        for (id, v) in &kept {
            assert_eq!(idx.vector(*id).unwrap(), v.as_slice());
        }
    }

    #[test]
    fn filter_restricts_candidates() {
        let mut idx = FlatIndex::new(DistanceMetric::Euclidean, 1);
        for id in 0..100u64 {
            idx.insert(id, &[id as f32]).unwrap();
        }
        let allowed: HashSet<u64> = [40, 80, 99].into_iter().collect();
        assert_eq!(idx.search(&[0.0], 2, Some(&allowed)).unwrap().ids(), vec![40, 80]);
        let wide: HashSet<u64> = (50..100).collect();
        assert_eq!(idx.search(&[0.0], 2, Some(&wide)).unwrap().ids(), vec![50, 51]);
    }

    #[test]
    fn cosine_vectors_are_normalized() {
        let mut idx = FlatIndex::new(DistanceMetric::Cosine, 2);
        idx.insert(1, &[3.0, 4.0]).unwrap();
        assert!(matches!(idx.insert(2, &[0.0, 0.0]), Err(Error::ZeroVector)));
        let v = idx.vector(1).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-7);
        let hit = idx.search(&[6.0, 8.0], 1, None).unwrap().hits[0];
        assert!(hit.distance.abs() < 1e-6);
    }
}
