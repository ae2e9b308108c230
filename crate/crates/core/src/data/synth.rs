use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, Dataset, Result};
use crate::nn::Tensor;

/// Gaussian clusters around uniformly drawn centers, rescaled per feature to
/// `[0, 1]`. Example `i` belongs to class `i mod classes`.
pub fn synth_blobs(
    n: usize,
    dim: usize,
    classes: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(DataError::InvalidArgument("need at least 2 classes".into()));
    }
    if n == 0 || dim == 0 {
        return Err(DataError::InvalidArgument(
            "n and dim must be positive".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::InvalidArgument(format!("spread = {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..classes * dim).map(|_| rng.random::<f64>()).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut values = Vec::with_capacity(n * dim);
    for &y in &labels {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(centers[y * dim + j] + spread * z);
        }
    }
    for j in 0..dim {
        let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let v = values[i * dim + j];
            (lo.min(v), hi.max(v))
        });
        let range = hi - lo;
        for i in 0..n {
            let v = &mut values[i * dim + j];
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }
    let features =
        Tensor::new(vec![n, dim], values).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
    Dataset::new(format!("blobs-{classes}x{dim}"), features, labels, classes)
}
