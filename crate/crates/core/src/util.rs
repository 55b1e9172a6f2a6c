use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// SplitMix64 finalizer; used to derive independent per-step / per-view seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Normalizes in place and returns the pre-normalization norm.
pub(crate) fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    assert!(n > 0.0 && n.is_finite(), "cannot normalize a zero or non-finite vector");
    for x in v.iter_mut() {
        *x /= n;
    }
    n
}

/// Gradient through `y = a / |a|` given `y`, `|a|` and `dL/dy`.
pub(crate) fn normalize_vjp(y: &[f64], pre_norm: f64, grad_y: &[f64]) -> Vec<f64> {
    let proj = dot(y, grad_y);
    y.iter().zip(grad_y).map(|(yi, gi)| (gi - yi * proj) / pre_norm).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// FNV-1a, for stable text hashing independent of std's randomized hasher.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_vjp_matches_finite_differences() {
        let a = vec![0.3, -1.2, 0.7, 2.0];
        let g = vec![0.5, 0.1, -0.4, 0.9];
        let f = |v: &[f64]| {
            let mut y = v.to_vec();
            normalize(&mut y);
            dot(&y, &g)
        };
        let mut y = a.clone();
        let n = normalize(&mut y);
        let analytic = normalize_vjp(&y, n, &g);
        let numeric = crate::gradcheck::central_differences(f, &a, 1e-6);
        for (x, z) in analytic.iter().zip(&numeric) {
            assert!((x - z).abs() < 1e-8);
        }
    }

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(2, 0));
        assert_eq!(mix_seed(5, 9), mix_seed(5, 9));
    }
}
