//! Product quantization: per-sub-space k-means codebooks, nearest-centroid
//! encoding and lookup-table (asymmetric) distances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DistanceMetric, Vector};

pub const DEFAULT_MAX_ITERS: usize = 25;

/// `m` tables of `k` centroids, each `sub_dim` long, stored contiguously
/// as `[table][centroid][component]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PqCodebook {
    m: usize,
    k: usize,
    sub_dim: usize,
    centroids: Vec<f32>,
}

/// One centroid index per sub-space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PqCode(pub Vec<u8>);

impl PqCodebook {
    pub fn from_parts(m: usize, k: usize, sub_dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if m == 0 || sub_dim == 0 || !(1..=256).contains(&k) {
            return Err(Error::InvalidConfig(format!(
                "invalid codebook shape m={m} k={k} sub_dim={sub_dim}"
            )));
        }
        if centroids.len() != m * k * sub_dim {
            return Err(Error::LengthMismatch {
                left: centroids.len(),
                right: m * k * sub_dim,
            });
        }
        crate::types::check_finite("centroids", &centroids)?;
        Ok(PqCodebook {
            m,
            k,
            sub_dim,
            centroids,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn dim(&self) -> usize {
        self.m * self.sub_dim
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Centroid `j` of sub-space `i`.
    pub fn centroid(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.k + j) * self.sub_dim;
        &self.centroids[start..start + self.sub_dim]
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                field: "vector",
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    fn check_code(&self, code: &PqCode) -> Result<()> {
        if code.0.len() != self.m {
            return Err(Error::LengthMismatch {
                left: code.0.len(),
                right: self.m,
            });
        }
        if let Some((position, &c)) = code.0.iter().enumerate().find(|(_, &c)| usize::from(c) >= self.k) {
            return Err(Error::CodeOutOfRange {
                position,
                code: usize::from(c),
                k: self.k,
            });
        }
        Ok(())
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = f64::from(x) - f64::from(y);
        acc += d * d;
    }
    acc
}

/// Index of the nearest of `k` contiguous centroids; ties go to the lowest index.
fn nearest(sub: &[f32], table: &[f32], sub_dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in table.chunks_exact(sub_dim).enumerate() {
        let d = sq_dist(sub, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Per-sub-space error after every Lloyd assignment step.
#[derive(Clone, Debug, Default)]
pub struct TrainingTrace {
    pub errors: Vec<Vec<f64>>,
}

pub fn pq_train(training: &[Vector], m: usize, k: usize, max_iters: usize, seed: u64) -> Result<PqCodebook> {
    pq_train_traced(training, m, k, max_iters, seed).map(|(cb, _)| cb)
}

pub fn pq_train_traced(
    training: &[Vector],
    m: usize,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(PqCodebook, TrainingTrace)> {
    let dim = training.first().map(|v| v.dim()).unwrap_or(0);
    let mut block = Vec::with_capacity(training.len() * dim);
    for v in training {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                field: "training_vectors",
                expected: dim,
                actual: v.dim(),
            });
        }
        block.extend_from_slice(v);
    }
    pq_train_block(&block, dim, m, k, max_iters, seed)
}

/// Trains on a row-major block of `dim`-long vectors.
pub fn pq_train_block(
    block: &[f32],
    dim: usize,
    m: usize,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(PqCodebook, TrainingTrace)> {
    if m == 0 || dim == 0 || dim % m != 0 {
        return Err(Error::DimensionNotDivisible { dim, m });
    }
    if !(2..=256).contains(&k) {
        return Err(Error::InvalidConfig(format!("pq k must be in 2..=256, got {k}")));
    }
    if max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
    }
    let n = block.len() / dim;
    if n < k {
        return Err(Error::TooFewTrainingVectors { needed: k, got: n });
    }
    let sub_dim = dim / m;
    let mut centroids = Vec::with_capacity(m * k * sub_dim);
    let mut trace = TrainingTrace::default();
    for i in 0..m {
        let subs: Vec<f32> = block
            .chunks_exact(dim)
            .flat_map(|row| &row[i * sub_dim..(i + 1) * sub_dim])
            .copied()
            .collect();
        let sub_seed = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let (table, errors) = kmeans(&subs, sub_dim, k, max_iters, sub_seed);
        centroids.extend_from_slice(&table);
        trace.errors.push(errors);
    }
    Ok((PqCodebook::from_parts(m, k, sub_dim, centroids)?, trace))
}

/// Lloyd's k-means with k-means++ seeding. Returns the centroids and the
/// total squared error measured after each assignment step.
fn kmeans(points: &[f32], dim: usize, k: usize, max_iters: usize, seed: u64) -> (Vec<f32>, Vec<f64>) {
    let n = points.len() / dim;
    let point = |p: usize| &points[p * dim..(p + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|p| sq_dist(point(p), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (p, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = p;
                    break;
                }
                target -= d;
            }
            // floating-point residue can run past the end
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = point(chosen).to_vec();
        for (p, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(p), &c));
        }
        centroids.extend_from_slice(&c);
    }

    let mut assign = vec![usize::MAX; n];
    let mut errors = Vec::new();
    for _ in 0..max_iters {
        let mut changed = false;
        let mut error = 0.0;
        for p in 0..n {
            let (j, d) = nearest(point(p), &centroids, dim);
            error += d;
            if assign[p] != j {
                assign[p] = j;
                changed = true;
            }
        }
        debug_assert!(
            errors.last().is_none_or(|&prev: &f64| error <= prev * (1.0 + 1e-12) + 1e-9),
            "k-means error increased"
        );
        errors.push(error);
        if !changed && errors.len() > 1 {
            break;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for p in 0..n {
            let j = assign[p];
            counts[j] += 1;
            for (s, &x) in sums[j * dim..(j + 1) * dim].iter_mut().zip(point(p)) {
                *s += f64::from(x);
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(&sums[j * dim..]) {
                    *c = (s / counts[j] as f64) as f32;
                }
            }
        }
        // Empty clusters take the point of the largest cluster that lies
        // farthest from its centroid.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
            let far = (0..n)
                .filter(|&p| assign[p] == largest)
                .map(|p| (p, sq_dist(point(p), &centroids[largest * dim..(largest + 1) * dim])))
                .fold(None::<(usize, f64)>, |best, (p, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((p, d)),
                });
            if let Some((p, _)) = far {
                centroids[j * dim..(j + 1) * dim].copy_from_slice(point(p));
                assign[p] = j;
                counts[largest] -= 1;
                counts[j] = 1;
            }
        }
    }
    (centroids, errors)
}

pub fn pq_encode(v: &[f32], cb: &PqCodebook) -> Result<PqCode> {
    cb.check_dim(v.len())?;
    let table_len = cb.k * cb.sub_dim;
    let codes = (0..cb.m)
        .map(|i| {
            let sub = &v[i * cb.sub_dim..(i + 1) * cb.sub_dim];
            let table = &cb.centroids[i * table_len..(i + 1) * table_len];
            nearest(sub, table, cb.sub_dim).0 as u8
        })
        .collect();
    Ok(PqCode(codes))
}

pub fn pq_decode(code: &PqCode, cb: &PqCodebook) -> Result<Vector> {
    cb.check_code(code)?;
    let mut out = Vec::with_capacity(cb.dim());
    for (i, &c) in code.0.iter().enumerate() {
        out.extend_from_slice(cb.centroid(i, usize::from(c)));
    }
    Ok(Vector::from(out))
}

/// Squared Euclidean distance between a raw query and a coded vector.
pub fn pq_asymmetric_distance(query: &[f32], code: &PqCode, cb: &PqCodebook) -> Result<f32> {
    let table = AdcTable::new(query, cb)?;
    cb.check_code(code)?;
    Ok(table.distance(&code.0))
}

/// Per-query `m x k` table of partial distances.
#[derive(Clone, Debug)]
pub struct AdcTable {
    m: usize,
    k: usize,
    offset: f64,
    partials: Vec<f64>,
}

impl AdcTable {
    /// Squared-Euclidean table.
    pub fn new(query: &[f32], cb: &PqCodebook) -> Result<Self> {
        Self::for_metric(query, cb, DistanceMetric::Euclidean)
    }

    /// Table whose sums follow the index-side convention of `metric`:
    /// squared L2, `1 - dot` (unit vectors) or `-dot`.
    pub fn for_metric(query: &[f32], cb: &PqCodebook, metric: DistanceMetric) -> Result<Self> {
        cb.check_dim(query.len())?;
        let mut partials = Vec::with_capacity(cb.m * cb.k);
        for i in 0..cb.m {
            let sub = &query[i * cb.sub_dim..(i + 1) * cb.sub_dim];
            for j in 0..cb.k {
                let c = cb.centroid(i, j);
                partials.push(match metric {
                    DistanceMetric::Euclidean => sq_dist(sub, c),
                    DistanceMetric::Cosine | DistanceMetric::DotProduct => {
                        -sub.iter().zip(c).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum::<f64>()
                    }
                });
            }
        }
        let offset = if metric == DistanceMetric::Cosine { 1.0 } else { 0.0 };
        Ok(AdcTable {
            m: cb.m,
            k: cb.k,
            offset,
            partials,
        })
    }

    /// Codes are assumed valid for the codebook the table was built from.
    #[inline]
    pub fn distance(&self, code: &[u8]) -> f32 {
        debug_assert_eq!(code.len(), self.m);
        let mut acc = self.offset;
        for (i, &c) in code.iter().enumerate() {
            acc += self.partials[i * self.k + usize::from(c)];
        }
        acc as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::euclidean_distance_sq;

    fn vectors(rows: &[&[f32]]) -> Vec<Vector> {
        rows.iter().map(|r| Vector::from(*r)).collect()
    }

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector::from((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>()))
            .collect()
    }

    /// Minimum-SSE 2-partition by enumeration.
    fn exhaustive_two_means(points: &[[f32; 2]]) -> Vec<[f64; 2]> {
        let n = points.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let mut cs = vec![];
            let mut sse = 0.0;
            for side in [true, false] {
                let members: Vec<_> = (0..n).filter(|&p| ((mask >> p) & 1 == 1) == side).collect();
                let c = [0, 1].map(|d| members.iter().map(|&p| f64::from(points[p][d])).sum::<f64>() / members.len() as f64);
                sse += members
                    .iter()
                    .map(|&p| (0..2).map(|d| (f64::from(points[p][d]) - c[d]).powi(2)).sum::<f64>())
                    .sum::<f64>();
                cs.push(c);
            }
            if sse < best.0 {
                best = (sse, cs);
            }
        }
        let mut cs = best.1;
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cs
    }

    #[test]
    fn two_cluster_example_matches_exhaustive_oracle() {
        let points = [[0.0f32, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let oracle = exhaustive_two_means(&points);
        assert_eq!(oracle, vec![[0.0, 0.5], [10.0, 0.5]]);
        let train: Vec<Vector> = points.iter().map(|p| Vector::from(p.to_vec())).collect();
        for seed in 0..20 {
            let cb = pq_train(&train, 1, 2, DEFAULT_MAX_ITERS, seed).unwrap();
            let mut got: Vec<[f64; 2]> =
                (0..2).map(|j| [0, 1].map(|d| f64::from(cb.centroid(0, j)[d]))).collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, oracle, "seed {seed}");
        }
    }

    #[test]
    fn exact_cluster_values_are_recovered() {
        let values: [[f32; 2]; 4] = [[1.0, 2.0], [-3.0, 0.5], [7.0, 7.0], [0.0, -4.0]];
        let mut train = vec![];
        for rep in 0..5 {
            for (a, b) in values.iter().zip(values.iter().cycle().skip(rep % 4)) {
                train.push(Vector::from(vec![a[0], a[1], b[0], b[1]]));
            }
        }
        let cb = pq_train(&train, 2, 4, DEFAULT_MAX_ITERS, 3).unwrap();
        for i in 0..2 {
            let mut got: Vec<Vec<f32>> = (0..4).map(|j| cb.centroid(i, j).to_vec()).collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut want: Vec<Vec<f32>> = values.iter().map(|v| v.to_vec()).collect();
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, want);
        }
        for v in &train {
            let back = pq_decode(&pq_encode(v, &cb).unwrap(), &cb).unwrap();
            assert_eq!(euclidean_distance_sq(v, &back).unwrap(), 0.0);
        }
    }

    #[test]
    fn training_is_deterministic_and_monotone() {
        let train = random_vectors(600, 8, 5);
        let (a, trace) = pq_train_traced(&train, 4, 16, 30, 42).unwrap();
        let (b, _) = pq_train_traced(&train, 4, 16, 30, 42).unwrap();
        assert_eq!(a, b);
        for errors in &trace.errors {
            for w in errors.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{errors:?}");
            }
        }
    }

    #[test]
    fn training_errors() {
        let train = random_vectors(10, 6, 1);
        assert!(matches!(pq_train(&train, 4, 4, 10, 0), Err(Error::DimensionNotDivisible { .. })));
        assert!(matches!(pq_train(&train, 2, 16, 10, 0), Err(Error::TooFewTrainingVectors { needed: 16, got: 10 })));
    }

    #[test]
    fn encode_picks_exact_centroids_and_lowest_tie() {
        let cb = PqCodebook::from_parts(2, 8, 1, (0..16).map(|x| x as f32).collect()).unwrap();
        // centroid 3 of table 0 is 3.0, centroid 7 of table 1 is 15.0
        assert_eq!(pq_encode(&[3.0, 15.0], &cb).unwrap(), PqCode(vec![3, 7]));
        // 2.5 is equidistant from 2.0 and 3.0
        assert_eq!(pq_encode(&[2.5, 8.0], &cb).unwrap().0[0], 2);
        assert_eq!(pq_decode(&PqCode(vec![0, 0]), &cb).unwrap().as_slice(), &[0.0, 8.0]);
        assert!(matches!(pq_decode(&PqCode(vec![0, 8]), &cb), Err(Error::CodeOutOfRange { position: 1, .. })));
        assert!(pq_encode(&[1.0], &cb).is_err());
    }

    #[test]
    fn decode_of_encode_is_best_reconstruction() {
        let train = random_vectors(200, 6, 9);
        let cb = pq_train(&train, 2, 4, 20, 1).unwrap();
        for v in random_vectors(50, 6, 10) {
            let best = euclidean_distance_sq(&v, &pq_decode(&pq_encode(&v, &cb).unwrap(), &cb).unwrap()).unwrap();
            for a in 0..4u8 {
                for b in 0..4u8 {
                    let other = pq_decode(&PqCode(vec![a, b]), &cb).unwrap();
                    assert!(best <= euclidean_distance_sq(&v, &other).unwrap());
                }
            }
        }
    }

    #[test]
    fn asymmetric_matches_decode_then_distance() {
        let train = random_vectors(300, 8, 2);
        let cb = pq_train(&train, 4, 8, 20, 4).unwrap();
        for (q, v) in random_vectors(100, 8, 3).iter().zip(random_vectors(100, 8, 4).iter()) {
            let code = pq_encode(v, &cb).unwrap();
            let adc = pq_asymmetric_distance(q, &code, &cb).unwrap();
            let direct = euclidean_distance_sq(q, &pq_decode(&code, &cb).unwrap()).unwrap();
            assert!((adc - direct).abs() / direct.max(1.0) <= 1e-5);
        }
        let code = pq_encode(&train[0], &cb).unwrap();
        let recon = pq_decode(&code, &cb).unwrap();
        assert_eq!(pq_asymmetric_distance(&recon, &code, &cb).unwrap(), 0.0);
    }

    #[test]
    fn sparse_rows_still_fill_every_cluster() {
        // 5 distinct points, k = 5, lots of duplicates of one
        let mut train = vectors(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        train.extend(std::iter::repeat_n(Vector::from(vec![0.0f32]), 50));
        let cb = pq_train(&train, 1, 5, 10, 0).unwrap();
        let mut got: Vec<f32> = (0..5).map(|j| cb.centroid(0, j)[0]).collect();
        got.sort_by(f32::total_cmp);
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }
}
