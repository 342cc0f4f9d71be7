//! Small statistics helpers and deterministic seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// RNG used throughout the simulator.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed from a master seed, a label and an index.
///
/// The construction is a hash of `label || master || index`, so any trial can
/// be reproduced without running the ones before it, and serial and parallel
/// execution agree.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(master.to_be_bytes());
    h.update(index.to_be_bytes());
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divides by `n`).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Unbiased sample standard deviation (divides by `n - 1`).
pub fn sample_std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Half-width of the normal-approximation 95% confidence interval of the mean.
pub fn ci95_half_width(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    1.96 * sample_std_dev(xs) / (xs.len() as f64).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `p * (n - 1)` in the sorted sample).
///
/// Panics on an empty sample or `p` outside `[0, 1]`.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty sample");
    assert!((0.0..=1.0).contains(&p), "quantile level {p} outside [0, 1]");
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let xs = [0.1, 0.4, 0.6, 0.9];
        assert!((quantile(&xs, 0.25) - 0.325).abs() < 1e-12);
        assert!((quantile(&xs, 0.5) - 0.5).abs() < 1e-12);
        assert!((quantile(&xs, 0.75) - 0.675).abs() < 1e-12);
        assert_eq!(quantile(&xs, 0.0), 0.1);
        assert_eq!(quantile(&xs, 1.0), 0.9);
    }

    #[test]
    fn median_of_odd_sample() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
    }

    #[test]
    fn derived_seeds_differ_by_index_and_label() {
        let a = derive_seed(7, "trial", 0);
        assert_eq!(a, derive_seed(7, "trial", 0));
        assert_ne!(a, derive_seed(7, "trial", 1));
        assert_ne!(a, derive_seed(7, "other", 0));
        assert_ne!(a, derive_seed(8, "trial", 0));
    }
}
