use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{FlatVector, Gradient, ParamVector};
use super::{NnError, Result};

/// `x − lr·(g + weight_decay·x)`.
pub fn sgd_step(
    params: &ParamVector,
    grad: &Gradient,
    lr: f64,
    weight_decay: f64,
) -> Result<ParamVector> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grad, lr, weight_decay)?;
    Ok(out)
}

pub fn sgd_step_in_place(
    params: &mut ParamVector,
    grad: &Gradient,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.dim() != grad.dim() {
        return Err(NnError::ShapeMismatch(format!(
            "{} parameters but {} gradient entries",
            params.dim(),
            grad.dim()
        )));
    }
    for (x, g) in params.values_mut().iter_mut().zip(&grad.values) {
        *x -= lr * (g + weight_decay * *x);
    }
    Ok(())
}

const WARMUP_FRACTION: f64 = 0.3;
const START_DIVISOR: f64 = 25.0;
const END_DIVISOR: f64 = 1e4;

/// Linear one-cycle schedule over `total` steps: from `peak/25` up to `peak`
/// at 30% of the steps, then down to `peak/10⁴` at the last step.
pub fn one_cycle_lr(step: usize, total: usize, peak: f64) -> Result<f64> {
    if step >= total {
        return Err(NnError::InvalidArgument(format!(
            "step {step} outside a schedule of {total} steps"
        )));
    }
    let (start, end) = (peak / START_DIVISOR, peak / END_DIVISOR);
    let apex = WARMUP_FRACTION * total as f64;
    let last = (total - 1) as f64;
    let t = step as f64;
    Ok(if t <= apex {
        start + (peak - start) * t / apex
    } else if last > apex {
        peak + (end - peak) * (t - apex) / (last - apex)
    } else {
        end
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    OneCycle { peak: f64 },
}

impl LrSchedule {
    pub fn lr(&self, step: usize, total: usize) -> Result<f64> {
        match *self {
            LrSchedule::Constant(lr) => Ok(lr),
            LrSchedule::OneCycle { peak } => one_cycle_lr(step, total, peak),
        }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::OneCycle { peak } => peak,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NnError::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(NnError::InvalidArgument(format!(
                "weight_decay = {}",
                self.weight_decay
            )));
        }
        if !(self.lr_schedule.peak() >= 0.0 && self.lr_schedule.peak().is_finite()) {
            return Err(NnError::InvalidArgument(format!(
                "learning rate = {}",
                self.lr_schedule.peak()
            )));
        }
        Ok(())
    }

    /// Minibatches per epoch over `n` examples; the last partial batch is kept.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Visiting order of `n` examples in `epoch`, derived from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}
