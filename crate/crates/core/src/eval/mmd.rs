//! Unbiased empirical squared Maximum Mean Discrepancy with a Gaussian
//! kernel; the bandwidth is the median pairwise distance over the pooled
//! samples. The u-statistic can dip below zero on close distributions, so
//! the estimate is clamped at zero.

use super::EvalError;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared-MMD estimate between two sample sets of equal dimension.
pub fn mmd_estimate(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::InsufficientSamples);
    }
    let dim = a[0].len();
    for v in a.iter().chain(b.iter()) {
        if v.len() != dim {
            return Err(EvalError::DimensionMismatch { a: dim, b: v.len() });
        }
    }

    // median heuristic over all pooled pairwise distances
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b.iter()).collect();
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    dists.sort_by(|x, y| x.total_cmp(y));
    let median = dists[dists.len() / 2];
    let sigma = if median > 0.0 { median } else { 1.0 };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let kernel = |x: &[f64], y: &[f64]| (-gamma * sq_dist(x, y)).exp();

    let m = a.len() as f64;
    let n = b.len() as f64;
    let mut k_aa = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                k_aa += kernel(&a[i], &a[j]);
            }
        }
    }
    let mut k_bb = 0.0;
    for i in 0..b.len() {
        for j in 0..b.len() {
            if i != j {
                k_bb += kernel(&b[i], &b[j]);
            }
        }
    }
    let mut k_ab = 0.0;
    for x in a {
        for y in b {
            k_ab += kernel(x, y);
        }
    }
    let estimate = k_aa / (m * (m - 1.0)) + k_bb / (n * (n - 1.0)) - 2.0 * k_ab / (m * n);
    Ok(estimate.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize, mean: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let u1: f64 = rng.random::<f64>().max(1e-12);
                        let u2: f64 = rng.random();
                        mean + (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identical_sets_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian_cloud(&mut rng, 20, 5, 0.0);
        let v = mmd_estimate(&a, &a).unwrap();
        assert!(v.abs() <= 1e-9, "expected 0, got {v}");
    }

    #[test]
    fn estimator_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian_cloud(&mut rng, 15, 4, 0.0);
        let b = gaussian_cloud(&mut rng, 18, 4, 1.0);
        let ab = mmd_estimate(&a, &b).unwrap();
        let ba = mmd_estimate(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn distant_clouds_score_higher_than_near_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = gaussian_cloud(&mut rng, 30, 6, 0.0);
        let near = gaussian_cloud(&mut rng, 30, 6, 0.1);
        let far = gaussian_cloud(&mut rng, 30, 6, 10.0);
        let near_v = mmd_estimate(&base, &near).unwrap();
        let far_v = mmd_estimate(&base, &far).unwrap();
        assert!(far_v > near_v, "far {far_v} should exceed near {near_v}");
        assert!(far_v > 0.5);
    }

    #[test]
    fn nonnegative_after_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..5u64 {
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            let a = gaussian_cloud(&mut rng, 12, 3, 0.0);
            let b = gaussian_cloud(&mut r2, 12, 3, 0.0);
            assert!(mmd_estimate(&a, &b).unwrap() >= 0.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let b = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 2.0]];
        assert!(matches!(
            mmd_estimate(&a, &b),
            Err(EvalError::DimensionMismatch { .. })
        ));
        let single = vec![vec![0.0, 1.0]];
        assert!(matches!(
            mmd_estimate(&single, &a),
            Err(EvalError::InsufficientSamples)
        ));
    }
}
