//! Accuracy metrics reported by the benchmark.

use std::collections::HashSet;

/// `|returned[..k] ∩ truth[..k]| / k` for one query. `returned` may be
/// shorter than `k`.
pub fn recall_at_k(returned: &[u64], truth: &[u64], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let want: HashSet<u64> = truth.iter().take(k).copied().collect();
    let got: HashSet<u64> = returned.iter().take(k).copied().collect();
    got.intersection(&want).count() as f64 / k as f64
}

/// Mean of [`recall_at_k`] over queries.
pub fn mean_recall(returned: &[Vec<u64>], truth: &[Vec<u64>], k: usize) -> f64 {
    if returned.is_empty() {
        return 0.0;
    }
    returned.iter().zip(truth).map(|(r, t)| recall_at_k(r, t, k)).sum::<f64>() / returned.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistanceRatio {
    /// Mean over the queries that were counted.
    pub mean: f64,
    /// Queries left out: a zero true k-th distance with a non-zero returned
    /// one, or fewer than `k` hits returned.
    pub excluded: usize,
}

/// Mean of `returned[k-1] / truth[k-1]` over queries. A zero true distance
/// counts as ratio 1 when the returned one is also zero and is excluded
/// otherwise.
pub fn last_distances_ratio(returned: &[Vec<f32>], truth: &[Vec<f32>], k: usize) -> DistanceRatio {
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut excluded = 0usize;
    for (r, t) in returned.iter().zip(truth) {
        let (Some(&got), Some(&want)) = (r.get(k.wrapping_sub(1)), t.get(k.wrapping_sub(1))) else {
            excluded += 1;
            continue;
        };
        let ratio = if want == 0.0 {
            if got == 0.0 {
                1.0
            } else {
                excluded += 1;
                continue;
            }
        } else {
            got as f64 / want as f64
        };
        sum += ratio;
        counted += 1;
    }
    DistanceRatio {
        mean: if counted == 0 { 0.0 } else { sum / counted as f64 },
        excluded,
    }
}

/// Mean over queries of `min(returned, k) / k`.
pub fn mean_fraction_returned(counts: &[usize], k: usize) -> f64 {
    if counts.is_empty() || k == 0 {
        return 0.0;
    }
    counts.iter().map(|&c| c.min(k) as f64 / k as f64).sum::<f64>() / counts.len() as f64
}
