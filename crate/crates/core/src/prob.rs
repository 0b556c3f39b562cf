//! Small numeric helpers shared by the mechanisms, attacks and metrics.

use rand::{Rng, RngCore};

/// Relative slack used when deciding that two expected costs tie.
pub const TIE_RELATIVE_TOLERANCE: f64 = 1e-12;

/// Index of the smallest entry; entries within a relative `1e-12` of the
/// minimum count as ties and the lowest index wins.
///
/// Panics on an empty slice.
pub fn argmin_lowest(costs: &[f64]) -> usize {
    assert!(!costs.is_empty(), "argmin of an empty slice");
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = TIE_RELATIVE_TOLERANCE * min.abs().max(f64::MIN_POSITIVE);
    costs
        .iter()
        .position(|&c| c <= min + slack)
        .expect("minimum is attained")
}

/// Draws an index from a (not necessarily normalized) weight vector by
/// inverse-CDF sampling. Zero-weight entries are never returned.
pub fn sample_index(weights: &[f64], rng: &mut dyn RngCore) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "sampling from an all-zero weight vector");
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // Rounding can leave u marginally above the accumulated sum.
    last_positive
}

/// Total-variation distance between two distributions of equal length.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Inner product. Four running sums so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
