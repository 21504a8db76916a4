use serde::{Deserialize, Serialize};

use crate::numeric::snap_ceil;

/// Which complexity result the stepsize and horizon formulas come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComplexityMode {
    /// Fixed per-worker compute times.
    #[default]
    Fixed,
    /// Arbitrary time-varying compute power.
    Universal,
}

/// `γ = min{1/(8nL), εB/(10Lσ²)}`, or `1/(10nL)` in universal mode.
///
/// With `σ² = 0` the second branch is vacuous.
pub fn theory_stepsize(n: usize, l: f64, sigma_sq: f64, epsilon: f64, b_lower: f64, mode: ComplexityMode) -> f64 {
    let n = n as f64;
    match mode {
        ComplexityMode::Universal => 1.0 / (10.0 * n * l),
        ComplexityMode::Fixed => {
            let first = 1.0 / (8.0 * n * l);
            if sigma_sq > 0.0 {
                first.min(epsilon * b_lower / (10.0 * l * sigma_sq))
            } else {
                first
            }
        }
    }
}

/// `K = ⌈32nLΔ/ε + 40LΔσ²/(Bε²)⌉`, or `⌈160LΔ/ε⌉` in universal mode.
pub fn predicted_iterations(
    n: usize,
    l: f64,
    delta: f64,
    sigma_sq: f64,
    epsilon: f64,
    b_lower: f64,
    mode: ComplexityMode,
) -> u64 {
    let k = match mode {
        ComplexityMode::Universal => 160.0 * l * delta / epsilon,
        ComplexityMode::Fixed => {
            let noise = if sigma_sq > 0.0 { 40.0 * l * delta * sigma_sq / (b_lower * epsilon * epsilon) } else { 0.0 };
            32.0 * n as f64 * l * delta / epsilon + noise
        }
    };
    snap_ceil(k).max(0.0) as u64
}
