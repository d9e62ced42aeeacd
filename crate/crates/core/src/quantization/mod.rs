//! Optional vector compression: product quantization and binary
//! quantization.

mod bq;
mod pq;

pub use bq::{bq_encode, bq_train, hamming_distance, BinaryCode, HyperplaneSet};
pub use pq::{
    pq_asymmetric_distance, pq_decode, pq_encode, pq_train, pq_train_block, pq_train_traced,
    AdcTable, PqCode, PqCodebook, TrainingTrace, DEFAULT_MAX_ITERS,
};

use crate::error::Result;
use crate::types::{DistanceMetric, QuantizationMode};

/// Most vectors a codebook is trained on; larger collections are sampled.
pub const MAX_TRAINING_SAMPLE: usize = 100_000;

/// Trained quantizer state for a collection.
#[derive(Clone, Debug, PartialEq)]
pub enum Quantizer {
    Pq(PqCodebook),
    Bq(HyperplaneSet),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Code {
    Pq(PqCode),
    Bq(BinaryCode),
}

impl Quantizer {
    /// Trains the quantizer described by `mode` on a row-major block.
    /// Returns `None` for [`QuantizationMode::None`].
    pub fn train(mode: QuantizationMode, block: &[f32], dim: usize, seed: u64) -> Result<Option<Self>> {
        Ok(match mode {
            QuantizationMode::None => None,
            QuantizationMode::Pq { m, k } => {
                let (cb, _) = pq_train_block(block, dim, m, k, DEFAULT_MAX_ITERS, seed)?;
                Some(Quantizer::Pq(cb))
            }
            QuantizationMode::Bq { m } => Some(Quantizer::Bq(bq_train(dim, m, seed)?)),
        })
    }

    pub fn encode(&self, v: &[f32]) -> Result<Code> {
        match self {
            Quantizer::Pq(cb) => pq_encode(v, cb).map(Code::Pq),
            Quantizer::Bq(h) => bq_encode(v, h).map(Code::Bq),
        }
    }

    /// Builds a per-query scorer over codes produced by this quantizer.
    pub fn scorer(&self, query: &[f32], metric: DistanceMetric) -> Result<CodeScorer> {
        match self {
            Quantizer::Pq(cb) => Ok(CodeScorer::Pq(AdcTable::for_metric(query, cb, metric)?)),
            Quantizer::Bq(h) => Ok(CodeScorer::Bq(bq_encode(query, h)?)),
        }
    }
}

/// Approximate distance from one query to stored codes: lookup-table sums
/// for PQ, Hamming distance for BQ.
#[derive(Clone, Debug)]
pub enum CodeScorer {
    Pq(AdcTable),
    Bq(BinaryCode),
}

impl CodeScorer {
    #[inline]
    pub fn score(&self, code: &Code) -> f32 {
        match (self, code) {
            (CodeScorer::Pq(t), Code::Pq(c)) => t.distance(&c.0),
            (CodeScorer::Bq(q), Code::Bq(c)) => bq::hamming_words(q.words(), c.words()) as f32,
            _ => f32::INFINITY,
        }
    }
}
