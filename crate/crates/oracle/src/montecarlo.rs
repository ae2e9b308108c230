//! Monte Carlo estimators with reported standard errors.
//!
//! Samples come from a PCG generator, a different family from the ChaCha
//! streams used for training noise.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64Mcg;

use crate::{OracleError, Result};

pub const MIN_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    /// `|value − target| ≤ k·SE`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

/// Streaming mean/variance (Welford), mergeable across batches.
#[derive(Debug, Clone, Copy, Default)]
pub struct McAccumulator {
    count: usize,
    mean: f64,
    m2: f64,
}

impl McAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &McAccumulator) {
        if other.count == 0 {
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn estimate(&self) -> McEstimate {
        let var = if self.count > 1 {
            self.m2 / (self.count - 1) as f64
        } else {
            0.0
        };
        McEstimate {
            value: self.mean,
            std_error: (var / self.count.max(1) as f64).sqrt(),
            samples: self.count,
        }
    }
}

/// A one-dimensional distribution that can be sampled and whose log-density
/// is known in closed form.
pub trait Density1d {
    fn sample(&self, rng: &mut Pcg64Mcg) -> f64;
    fn log_density(&self, x: f64) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct Gaussian1d {
    pub mean: f64,
    pub sigma: f64,
}

impl Gaussian1d {
    pub fn new(mean: f64, sigma: f64) -> Self {
        Self { mean, sigma }
    }
}

impl Density1d for Gaussian1d {
    fn sample(&self, rng: &mut Pcg64Mcg) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.sigma * z
    }

    fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Estimates `E_ε(μ ‖ ν) = E_{X∼μ}[max(0, 1 − e^ε ν(X)/μ(X))]`.
pub fn mc_hockey_stick<M: Density1d, N: Density1d>(
    mu: &M,
    nu: &N,
    eps: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n < MIN_SAMPLES {
        return Err(OracleError::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    let mut acc = McAccumulator::default();
    for _ in 0..n {
        let x = mu.sample(&mut rng);
        let log_ratio = nu.log_density(x) - mu.log_density(x);
        if log_ratio.is_nan() {
            return Err(OracleError::DensityFailure(x));
        }
        acc.push((1.0 - (eps + log_ratio).exp()).max(0.0));
    }
    Ok(acc.estimate())
}

/// Estimates the Rényi moment `E_{X∼ν}[(μ(X)/ν(X))^q]` for
/// `μ = N(dist, σ²)`, `ν = N(0, σ²)`; it equals `exp((q−1)·D_q(μ‖ν))`.
pub fn mc_renyi_moment(q: f64, dist: f64, sigma: f64, n: usize, seed: u64) -> Result<McEstimate> {
    if !(q > 1.0 && sigma > 0.0) {
        return Err(OracleError::InvalidArgument(format!(
            "q = {q}, sigma = {sigma}"
        )));
    }
    let mu = Gaussian1d::new(dist, sigma);
    let nu = Gaussian1d::new(0.0, sigma);
    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    let mut acc = McAccumulator::default();
    for _ in 0..n {
        let x = nu.sample(&mut rng);
        acc.push((q * (mu.log_density(x) - nu.log_density(x))).exp());
    }
    Ok(acc.estimate())
}

/// Uniform draws in `[0, 1)` from the oracle generator family.
pub fn uniform_stream(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}
