//! Distance kernels.
//!
//! Two paths exist for every metric. The scalar functions ([`dot_product`],
//! [`euclidean_distance_sq`], [`cosine_distance`]) accumulate sequentially in
//! `f64` and serve as the reference. The blocked path ([`batch_distances`],
//! [`DistanceKernel`]) splits components into [`LANES`] independent `f64`
//! accumulators and scores [`BLOCK`] rows per pass over the query, which lets
//! the compiler emit packed SIMD (and fused multiply-add on AVX2 hosts). Lane
//! reordering means the two paths agree to ~1e-7 relative, not bit-for-bit.

use crate::error::{Error, Result};
use crate::types::DistanceMetric;

/// Accumulator lanes per row.
pub const LANES: usize = 8;
/// Rows scored together by the blocked kernels.
pub const BLOCK: usize = 4;

fn check_dims(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            field: "vector",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

fn dot_scalar(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        acc += f64::from(x) * f64::from(y);
    }
    acc
}

fn l2_sq_scalar(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = f64::from(x) - f64::from(y);
        acc += d * d;
    }
    acc
}

fn cosine_from_parts(dot: f64, norm_a_sq: f64, norm_b_sq: f64) -> f32 {
    let sim = dot / (norm_a_sq.sqrt() * norm_b_sq.sqrt());
    (1.0 - sim).clamp(0.0, 2.0) as f32
}

pub fn dot_product(a: &[f32], b: &[f32]) -> Result<f32> {
    check_dims(a, b)?;
    Ok(dot_scalar(a, b) as f32)
}

/// Squared Euclidean distance.
pub fn euclidean_distance_sq(a: &[f32], b: &[f32]) -> Result<f32> {
    check_dims(a, b)?;
    Ok(l2_sq_scalar(a, b) as f32)
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f32> {
    check_dims(a, b)?;
    let na = dot_scalar(a, a);
    let nb = dot_scalar(b, b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(cosine_from_parts(dot_scalar(a, b), na, nb))
}

/// Scalar distance for `metric`, with dot product reported as its plain value.
pub fn distance(a: &[f32], b: &[f32], metric: DistanceMetric) -> Result<f32> {
    match metric {
        DistanceMetric::Cosine => cosine_distance(a, b),
        DistanceMetric::Euclidean => euclidean_distance_sq(a, b),
        DistanceMetric::DotProduct => dot_product(a, b),
    }
}

/// Distances from `query` to every row of the row-major `block`.
///
/// Element `i` matches [`distance`] on `(query, row i)` within 1e-5 relative.
pub fn batch_distances(query: &[f32], block: &[f32], metric: DistanceMetric) -> Result<Vec<f32>> {
    let dim = query.len();
    if dim == 0 {
        return Err(Error::EmptyVector);
    }
    if block.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            field: "block",
            expected: dim,
            actual: block.len() % dim,
        });
    }
    let rows = block.len() / dim;
    let mut out = vec![0.0f32; rows];
    match metric {
        DistanceMetric::Euclidean => {
            dispatch::l2_rows(query, block, &mut out);
        }
        DistanceMetric::DotProduct => {
            let mut dots = vec![0.0f64; rows];
            dispatch::dot_rows(query, block, &mut dots);
            for (o, d) in out.iter_mut().zip(dots) {
                *o = d as f32;
            }
        }
        DistanceMetric::Cosine => {
            let nq = dispatch::dot(query, query);
            if nq == 0.0 {
                return Err(Error::ZeroVector);
            }
            let mut dots = vec![0.0f64; rows];
            dispatch::dot_rows(query, block, &mut dots);
            for (i, (o, d)) in out.iter_mut().zip(dots).enumerate() {
                let row = &block[i * dim..(i + 1) * dim];
                let nr = dispatch::dot(row, row);
                if nr == 0.0 {
                    return Err(Error::ZeroVector);
                }
                *o = cosine_from_parts(d, nq, nr);
            }
        }
    }
    Ok(out)
}

/// Index-side distance for a fixed metric and dimension.
///
/// Vectors handed to a cosine kernel are expected to be unit length (the
/// engine normalizes at insert and query time), so cosine reduces to
/// `1 - dot`. Dot product is negated so that smaller is always closer.
/// Euclidean stays squared; [`DistanceKernel::report`] converts to the
/// user-facing value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DistanceKernel {
    pub metric: DistanceMetric,
    pub dim: usize,
}

impl DistanceKernel {
    pub fn new(metric: DistanceMetric, dim: usize) -> Self {
        DistanceKernel { metric, dim }
    }

    #[inline]
    pub fn pair(&self, a: &[f32], b: &[f32]) -> f32 {
        debug_assert_eq!(a.len(), b.len());
        match self.metric {
            DistanceMetric::Euclidean => dispatch::l2(a, b) as f32,
            DistanceMetric::Cosine => (1.0 - dispatch::dot(a, b)) as f32,
            DistanceMetric::DotProduct => -dispatch::dot(a, b) as f32,
        }
    }

    /// Blocked form of [`pair`](Self::pair) over contiguous rows.
    pub fn rows(&self, query: &[f32], block: &[f32], out: &mut [f32]) {
        debug_assert_eq!(block.len(), out.len() * self.dim);
        match self.metric {
            DistanceMetric::Euclidean => dispatch::l2_rows(query, block, out),
            DistanceMetric::Cosine | DistanceMetric::DotProduct => {
                let mut dots = vec![0.0f64; out.len()];
                dispatch::dot_rows(query, block, &mut dots);
                let cosine = self.metric == DistanceMetric::Cosine;
                for (o, d) in out.iter_mut().zip(dots) {
                    *o = if cosine { (1.0 - d) as f32 } else { -d as f32 };
                }
            }
        }
    }

    /// Converts an internal distance to the reported one.
    #[inline]
    pub fn report(&self, internal: f32) -> f32 {
        match self.metric {
            DistanceMetric::Euclidean => internal.max(0.0).sqrt(),
            _ => internal,
        }
    }
}

/// Lane kernels. `FMA` selects fused multiply-add, which is only fast when
/// the surrounding function is compiled with the `fma` target feature.
mod lanes {
    use super::{BLOCK, LANES};

    #[inline(always)]
    fn madd<const FMA: bool>(x: f64, y: f64, acc: f64) -> f64 {
        if FMA {
            x.mul_add(y, acc)
        } else {
            acc + x * y
        }
    }

    #[inline(always)]
    fn hsum(acc: [f64; LANES]) -> f64 {
        let a = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
        (a[0] + a[2]) + (a[1] + a[3])
    }

    #[inline(always)]
    pub fn dot<const FMA: bool>(a: &[f32], b: &[f32]) -> f64 {
        let split = a.len() - a.len() % LANES;
        let mut acc = [0.0f64; LANES];
        for (ca, cb) in a[..split].chunks_exact(LANES).zip(b[..split].chunks_exact(LANES)) {
            for l in 0..LANES {
                acc[l] = madd::<FMA>(f64::from(ca[l]), f64::from(cb[l]), acc[l]);
            }
        }
        let mut tail = 0.0;
        for (&x, &y) in a[split..].iter().zip(&b[split..]) {
            tail += f64::from(x) * f64::from(y);
        }
        hsum(acc) + tail
    }

    #[inline(always)]
    pub fn l2<const FMA: bool>(a: &[f32], b: &[f32]) -> f64 {
        let split = a.len() - a.len() % LANES;
        let mut acc = [0.0f64; LANES];
        for (ca, cb) in a[..split].chunks_exact(LANES).zip(b[..split].chunks_exact(LANES)) {
            for l in 0..LANES {
                let d = f64::from(ca[l]) - f64::from(cb[l]);
                acc[l] = madd::<FMA>(d, d, acc[l]);
            }
        }
        let mut tail = 0.0;
        for (&x, &y) in a[split..].iter().zip(&b[split..]) {
            let d = f64::from(x) - f64::from(y);
            tail += d * d;
        }
        hsum(acc) + tail
    }

    #[inline(always)]
    pub fn dot_rows<const FMA: bool>(q: &[f32], block: &[f32], out: &mut [f64]) {
        let dim = q.len();
        let split = dim - dim % LANES;
        let full = out.len() - out.len() % BLOCK;
        for r in (0..full).step_by(BLOCK) {
            let rows: [&[f32]; BLOCK] =
                std::array::from_fn(|j| &block[(r + j) * dim..(r + j + 1) * dim]);
            let mut acc = [[0.0f64; LANES]; BLOCK];
            for c in (0..split).step_by(LANES) {
                for l in 0..LANES {
                    let x = f64::from(q[c + l]);
                    for j in 0..BLOCK {
                        acc[j][l] = madd::<FMA>(x, f64::from(rows[j][c + l]), acc[j][l]);
                    }
                }
            }
            for j in 0..BLOCK {
                let mut tail = 0.0;
                for c in split..dim {
                    tail += f64::from(q[c]) * f64::from(rows[j][c]);
                }
                out[r + j] = hsum(acc[j]) + tail;
            }
        }
        for r in full..out.len() {
            out[r] = dot::<FMA>(q, &block[r * dim..(r + 1) * dim]);
        }
    }

    #[inline(always)]
    pub fn l2_rows<const FMA: bool>(q: &[f32], block: &[f32], out: &mut [f32]) {
        let dim = q.len();
        let split = dim - dim % LANES;
        let full = out.len() - out.len() % BLOCK;
        for r in (0..full).step_by(BLOCK) {
            let rows: [&[f32]; BLOCK] =
                std::array::from_fn(|j| &block[(r + j) * dim..(r + j + 1) * dim]);
            let mut acc = [[0.0f64; LANES]; BLOCK];
            for c in (0..split).step_by(LANES) {
                for l in 0..LANES {
                    let x = f64::from(q[c + l]);
                    for j in 0..BLOCK {
                        let d = x - f64::from(rows[j][c + l]);
                        acc[j][l] = madd::<FMA>(d, d, acc[j][l]);
                    }
                }
            }
            for j in 0..BLOCK {
                let mut tail = 0.0;
                for c in split..dim {
                    let d = f64::from(q[c]) - f64::from(rows[j][c]);
                    tail += d * d;
                }
                out[r + j] = (hsum(acc[j]) + tail) as f32;
            }
        }
        for r in full..out.len() {
            out[r] = l2::<FMA>(q, &block[r * dim..(r + 1) * dim]) as f32;
        }
    }
}

/// Runtime selection between the AVX2+FMA build of the lane kernels and the
/// portable one.
mod dispatch {
    use super::lanes;

    #[cfg(target_arch = "x86_64")]
    mod x86 {
        use super::lanes;

        #[target_feature(enable = "avx2,fma")]
        pub unsafe fn dot(a: &[f32], b: &[f32]) -> f64 {
            lanes::dot::<true>(a, b)
        }

        #[target_feature(enable = "avx2,fma")]
        pub unsafe fn l2(a: &[f32], b: &[f32]) -> f64 {
            lanes::l2::<true>(a, b)
        }

        #[target_feature(enable = "avx2,fma")]
        pub unsafe fn dot_rows(q: &[f32], block: &[f32], out: &mut [f64]) {
            lanes::dot_rows::<true>(q, block, out)
        }

        #[target_feature(enable = "avx2,fma")]
        pub unsafe fn l2_rows(q: &[f32], block: &[f32], out: &mut [f32]) {
            lanes::l2_rows::<true>(q, block, out)
        }
    }

    #[inline]
    fn has_avx2_fma() -> bool {
        #[cfg(target_arch = "x86_64")]
        {
            std::arch::is_x86_feature_detected!("avx2")
                && std::arch::is_x86_feature_detected!("fma")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    }

    macro_rules! dispatched {
        ($name:ident($($arg:ident: $ty:ty),*) $(-> $ret:ty)?) => {
            #[inline]
            pub fn $name($($arg: $ty),*) $(-> $ret)? {
                #[cfg(target_arch = "x86_64")]
                if has_avx2_fma() {
                    // SAFETY: the required CPU features were detected above.
                    return unsafe { x86::$name($($arg),*) };
                }
                lanes::$name::<false>($($arg),*)
            }
        };
    }

    dispatched!(dot(a: &[f32], b: &[f32]) -> f64);
    dispatched!(l2(a: &[f32], b: &[f32]) -> f64);
    dispatched!(dot_rows(q: &[f32], block: &[f32], out: &mut [f64]));
    dispatched!(l2_rows(q: &[f32], block: &[f32], out: &mut [f32]));
}
