//! Systematic resampling and effective sample size.

use rand::Rng;

/// Effective sample size `1 / sum(w^2)` of normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        1.0 / s2
    } else {
        0.0
    }
}

/// Draws `n` ancestor indices from normalized `weights` with a single
/// uniform offset.
pub fn systematic_indices<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    if weights.is_empty() || n == 0 {
        return out;
    }
    let total: f64 = weights.iter().sum();
    let step = total / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut cum = weights[0];
    let mut i = 0;
    for _ in 0..n {
        while u > cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
        u += step;
    }
    out
}

/// Normalizes in place and returns the previous sum.
pub fn normalize(weights: &mut [f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    if s > 0.0 && s.is_finite() {
        weights.iter_mut().for_each(|w| *w /= s);
    }
    s
}

/// Converts log-weights to normalized linear weights; returns `false` when
/// every entry is `-inf` or NaN.
pub fn normalize_log(log_w: &[f64], out: &mut Vec<f64>) -> bool {
    let max = log_w.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    if !max.is_finite() {
        out.resize(log_w.len(), 0.0);
        return false;
    }
    out.extend(log_w.iter().map(|v| if v.is_nan() { 0.0 } else { (v - max).exp() }));
    normalize(out);
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ess_bounds() {
        assert_eq!(effective_sample_size(&[0.25; 4]), 4.0);
        assert_eq!(effective_sample_size(&[1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn systematic_counts_match_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = [0.5, 0.25, 0.125, 0.125];
        let idx = systematic_indices(&w, 8, &mut rng);
        let mut counts = [0usize; 4];
        idx.iter().for_each(|&i| counts[i] += 1);
        assert_eq!(counts, [4, 2, 1, 1]);
    }

    #[test]
    fn systematic_skips_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = [0.0, 0.5, 0.0, 0.5, 0.0];
        for _ in 0..100 {
            let idx = systematic_indices(&w, 10, &mut rng);
            assert!(idx.iter().all(|&i| i == 1 || i == 3));
        }
    }

    #[test]
    fn log_normalization() {
        let mut out = Vec::new();
        assert!(normalize_log(&[-1000.0, -1000.0 + 2f64.ln()], &mut out));
        assert!((out[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!(!normalize_log(&[f64::NEG_INFINITY; 3], &mut out));
    }
}
