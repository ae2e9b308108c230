use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `dim` i.i.d. `N(0, σ²)` draws. The same `(seed, index)` always gives the
/// same vector; different indices give independent streams.
pub fn gaussian_noise(dim: usize, sigma: f64, seed: u64, index: u64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    add_gaussian_noise(&mut out, sigma, seed, index);
    out
}

/// Adds the vector [`gaussian_noise`] would return to `target`. Zero σ
/// leaves it unchanged.
pub fn add_gaussian_noise(target: &mut [f64], sigma: f64, seed: u64, index: u64) {
    assert!(
        sigma >= 0.0 && sigma.is_finite(),
        "noise std must be finite and nonnegative, got {sigma}"
    );
    if sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    for x in target.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *x += sigma * z;
    }
}
