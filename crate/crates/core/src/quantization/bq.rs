//! Binary quantization by signed random projections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `m` hyperplane normals of dimension `dim`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneSet {
    m: usize,
    dim: usize,
    normals: Vec<f32>,
}

/// Packed bit string; bit `i` lives in word `i / 64` at position `i % 64`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryCode {
    len: usize,
    words: Vec<u64>,
}

impl HyperplaneSet {
    pub fn from_parts(m: usize, dim: usize, normals: Vec<f32>) -> Result<Self> {
        if m == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!("invalid hyperplane shape m={m} dim={dim}")));
        }
        if normals.len() != m * dim {
            return Err(Error::LengthMismatch {
                left: normals.len(),
                right: m * dim,
            });
        }
        crate::types::check_finite("normals", &normals)?;
        if normals.chunks_exact(dim).any(|u| u.iter().all(|&x| x == 0.0)) {
            return Err(Error::ZeroVector);
        }
        Ok(HyperplaneSet { m, dim, normals })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normals(&self) -> &[f32] {
        &self.normals
    }

    pub fn normal(&self, i: usize) -> &[f32] {
        &self.normals[i * self.dim..(i + 1) * self.dim]
    }
}

impl BinaryCode {
    pub fn zeros(len: usize) -> Self {
        BinaryCode {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut code = BinaryCode::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                code.set(i);
            }
        }
        code
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    /// Bitwise complement within the code length.
    pub fn complement(&self) -> Self {
        let mut out = BinaryCode::zeros(self.len);
        for i in 0..self.len {
            if !self.get(i) {
                out.set(i);
            }
        }
        out
    }
}

/// Draws `m` normals from the standard Gaussian in `dim` dimensions.
pub fn bq_train(dim: usize, m: usize, seed: u64) -> Result<HyperplaneSet> {
    if dim == 0 || m == 0 {
        return Err(Error::InvalidConfig(format!("bq needs dim >= 1 and m >= 1 (got {dim}, {m})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normals = Vec::with_capacity(m * dim);
    while normals.len() < m * dim {
        let u: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        // a zero draw has probability zero, but rejecting it keeps the invariant total
        if u.iter().any(|&x| x != 0.0) {
            normals.extend(u);
        }
    }
    HyperplaneSet::from_parts(m, dim, normals)
}

/// Bit `i` is set iff `u_i . v >= 0`.
pub fn bq_encode(v: &[f32], h: &HyperplaneSet) -> Result<BinaryCode> {
    if v.len() != h.dim {
        return Err(Error::DimensionMismatch {
            field: "vector",
            expected: h.dim,
            actual: v.len(),
        });
    }
    let mut code = BinaryCode::zeros(h.m);
    for i in 0..h.m {
        let proj: f64 = h.normal(i).iter().zip(v).map(|(&u, &x)| f64::from(u) * f64::from(x)).sum();
        if proj >= 0.0 {
            code.set(i);
        }
    }
    Ok(code)
}

pub fn hamming_distance(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::LengthMismatch {
            left: a.len,
            right: b.len,
        });
    }
    Ok(hamming_words(&a.words, &b.words))
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn training_is_deterministic() {
        let a = bq_train(16, 32, 7).unwrap();
        assert_eq!(a, bq_train(16, 32, 7).unwrap());
        assert_ne!(a, bq_train(16, 32, 8).unwrap());
        for i in 0..a.m() {
            assert!(a.normal(i).iter().any(|&x| x != 0.0));
        }
    }

    #[test]
    fn projections_average_to_zero() {
        let x: Vec<f32> = vec![0.5, -1.0, 2.0, 0.25];
        let norm = x.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        for m in [256, 4096] {
            let h = bq_train(4, m, 3).unwrap();
            let mean = (0..m)
                .map(|i| h.normal(i).iter().zip(&x).map(|(&u, &v)| f64::from(u) * f64::from(v)).sum::<f64>())
                .sum::<f64>()
                / m as f64;
            // u.x ~ N(0, |x|^2): standard error |x| / sqrt(m)
            assert!(mean.abs() <= 3.0 * norm / (m as f64).sqrt(), "m={m} mean={mean}");
        }
    }

    #[test]
    fn encode_examples() {
        let mut basis = vec![0.0f32; 9];
        for i in 0..3 {
            basis[i * 3 + i] = 1.0;
        }
        let h = HyperplaneSet::from_parts(3, 3, basis).unwrap();
        let code = bq_encode(&[1.0, 2.0, 3.0], &h).unwrap();
        assert!((0..3).all(|i| code.get(i)));
        // on the second hyperplane: u_2 . v == 0 counts as set
        let code = bq_encode(&[-1.0, 0.0, -3.0], &h).unwrap();
        assert_eq!((0..3).map(|i| code.get(i)).collect::<Vec<_>>(), vec![false, true, false]);
        assert!(bq_encode(&[1.0], &h).is_err());
    }

    #[test]
    fn positive_scaling_keeps_the_code() {
        let h = bq_train(8, 100, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let v: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: f32 = rng.random_range(0.1..10.0);
            let scaled: Vec<f32> = v.iter().map(|x| x * c).collect();
            assert_eq!(bq_encode(&v, &h).unwrap(), bq_encode(&scaled, &h).unwrap());
        }
    }

    #[test]
    fn hamming_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for len in [1usize, 63, 64, 65, 130] {
            let bits: Vec<bool> = (0..len).map(|_| rng.random()).collect();
            let a = BinaryCode::from_bits(&bits);
            assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
            assert_eq!(hamming_distance(&a, &a.complement()).unwrap(), len as u32);
            let other: Vec<bool> = (0..len).map(|_| rng.random()).collect();
            let naive = bits.iter().zip(&other).filter(|(x, y)| x != y).count() as u32;
            assert_eq!(hamming_distance(&a, &BinaryCode::from_bits(&other)).unwrap(), naive);
        }
        assert!(hamming_distance(&BinaryCode::zeros(3), &BinaryCode::zeros(4)).is_err());
    }
}
