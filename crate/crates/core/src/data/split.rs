use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result};

/// Retain/forget partition of `0..n`, both sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub retain: Vec<usize>,
    pub forget: Vec<usize>,
    pub seed: u64,
    pub fraction: f64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.retain.len() + self.forget.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Picks `k` of `n` indices uniformly without replacement. Returns
/// `(rest, picked)`, both sorted.
pub fn random_partition(n: usize, k: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(k <= n, "cannot pick {k} of {n}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    let mut mask = vec![false; n];
    for &i in &picked {
        mask[i] = true;
    }
    let rest = (0..n).filter(|&i| !mask[i]).collect();
    (rest, picked)
}

/// Uniform forget set of `round(fraction·n)` records (halves round up).
pub fn split_forget(n: usize, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "forget fraction {fraction} outside (0, 1)"
        )));
    }
    let k = (fraction * n as f64 + 0.5).floor() as usize;
    let (retain, forget) = random_partition(n, k.min(n), seed);
    Ok(DatasetSplit {
        retain,
        forget,
        seed,
        fraction,
    })
}
