//! Exact (flat) and approximate (HNSW) nearest-neighbour indexes.

mod flat;
mod hnsw;
mod result;

use std::borrow::Cow;

pub use flat::FlatIndex;
pub use hnsw::{select_neighbors_heuristic, HnswIndex, HnswParams};
pub use result::{Hit, SearchResult, SearchStats};
pub(crate) use result::TopK;

use crate::distance::DistanceKernel;
use crate::error::{Error, Result};
use crate::types::{normalize, DistanceMetric};

/// Checks the dimension and, for cosine kernels, scales to unit length.
pub(crate) fn prepare_vector(kernel: DistanceKernel, v: &[f32]) -> Result<Cow<'_, [f32]>> {
    if v.len() != kernel.dim {
        return Err(Error::DimensionMismatch {
            field: "vector",
            expected: kernel.dim,
            actual: v.len(),
        });
    }
    crate::types::check_finite("vector", v)?;
    if kernel.metric == DistanceMetric::Cosine {
        Ok(Cow::Owned(normalize(v)?.into_inner()))
    } else {
        Ok(Cow::Borrowed(v))
    }
}

/// Either index kind behind one type.
#[derive(Clone, Debug)]
pub enum Index {
    Flat(FlatIndex),
    Hnsw(HnswIndex),
}

impl Index {
    pub fn metric(&self) -> DistanceMetric {
        match self {
            Index::Flat(f) => f.metric(),
            Index::Hnsw(h) => h.metric(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Index::Flat(f) => f.dim(),
            Index::Hnsw(h) => h.dim(),
        }
    }

    /// Live entries.
    pub fn len(&self) -> usize {
        match self {
            Index::Flat(f) => f.len(),
            Index::Hnsw(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: u64) -> bool {
        match self {
            Index::Flat(f) => f.contains(id),
            Index::Hnsw(h) => h.contains(id),
        }
    }

    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        match self {
            Index::Flat(f) => f.vector(id),
            Index::Hnsw(h) => h.vector(id),
        }
    }

    pub fn insert(&mut self, id: u64, vector: &[f32]) -> Result<()> {
        match self {
            Index::Flat(f) => f.insert(id, vector),
            Index::Hnsw(h) => h.insert(id, vector),
        }
    }

    pub fn remove(&mut self, id: u64) -> bool {
        match self {
            Index::Flat(f) => f.remove(id),
            Index::Hnsw(h) => h.remove(id),
        }
    }

    pub fn live_ids(&self) -> Vec<u64> {
        match self {
            Index::Flat(f) => f.ids().to_vec(),
            Index::Hnsw(h) => h.live_ids().collect(),
        }
    }
}
