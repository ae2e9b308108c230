//! Exhaustive searches and finite differences.

/// Exact integer argmin of `C₀²/T + γ²·T·C₁²` over `T ∈ [1, t_max]`.
/// Ties resolve to the smaller `T`.
pub fn brute_min_steps(c0: f64, c1: f64, gamma: f64, t_max: u64) -> u64 {
    let objective = |t: u64| {
        let t = t as f64;
        c0 * c0 / t + gamma * gamma * t * c1 * c1
    };
    let mut best = 1;
    let mut best_value = objective(1);
    for t in 2..=t_max.max(1) {
        let v = objective(t);
        if v < best_value {
            best = t;
            best_value = v;
        }
    }
    best
}

/// Minimum of `q·c + ln(1/δ)/(q−1)` over an evenly spaced grid of orders in
/// `(1, q_max]`. Returns `(epsilon, q)`.
pub fn grid_renyi_conversion(c: f64, delta: f64, q_max: f64, points: usize) -> (f64, f64) {
    let log_inv_delta = (1.0 / delta).ln();
    let step = (q_max - 1.0) / points as f64;
    (1..=points)
        .map(|i| {
            let q = 1.0 + step * i as f64;
            (q * c + log_inv_delta / (q - 1.0), q)
        })
        .fold((f64::INFINITY, f64::NAN), |best, cur| {
            if cur.0 < best.0 {
                cur
            } else {
                best
            }
        })
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_difference_gradient<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
