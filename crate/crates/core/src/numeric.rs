//! Small numeric helpers shared across modules.

/// Relative tolerance used when snapping a real quantity onto the nearest
/// integer before taking a floor or ceiling. Work integrals and complexity
/// formulas are exact rationals in real arithmetic; this absorbs the few ulps
/// of rounding that would otherwise push `2.9999999999999996` below 3.
pub const SNAP_REL_TOL: f64 = 1e-9;

fn snapped(x: f64) -> Option<f64> {
    let r = x.round();
    ((x - r).abs() <= SNAP_REL_TOL * x.abs().max(1.0)).then_some(r)
}

/// `⌊x⌋` with values within [`SNAP_REL_TOL`] of an integer snapped onto it.
pub fn snap_floor(x: f64) -> f64 {
    snapped(x).unwrap_or_else(|| x.floor())
}

/// `⌈x⌉` with values within [`SNAP_REL_TOL`] of an integer snapped onto it.
pub fn snap_ceil(x: f64) -> f64 {
    snapped(x).unwrap_or_else(|| x.ceil())
}

/// Harmonic mean `((1/n) Σ 1/bᵢ)⁻¹` of batch counts; zero if any count is zero.
pub fn harmonic_mean(counts: &[u64]) -> f64 {
    if counts.is_empty() || counts.contains(&0) {
        return 0.0;
    }
    let inv: f64 = counts.iter().map(|&b| 1.0 / b as f64).sum();
    counts.len() as f64 / inv
}

/// SplitMix64 finalizer, used to derive independent RNG stream keys.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `draw`-th stochastic sample of `worker` within run `run_seed`.
///
/// Keyed on all three values so that sampled noise does not depend on the
/// order in which a server consumes events.
pub fn sample_seed(run_seed: u64, worker: usize, draw: u64) -> u64 {
    mix64(mix64(run_seed ^ 0x5EED_0000_0000_0000) ^ mix64(worker as u64).rotate_left(17) ^ mix64(draw.wrapping_add(0xD1A5)))
}

/// Median of a slice (average of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (type 7) of a non-empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    v[lo] * (1.0 - w) + v[hi] * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapping_absorbs_rounding_noise() {
        assert_eq!(snap_floor(0.3 / 0.1), 3.0);
        assert_eq!(snap_floor(2.5), 2.0);
        assert_eq!(snap_ceil(128.0 / 0.1), 1280.0);
        assert_eq!(snap_ceil(1280.5), 1281.0);
    }

    #[test]
    fn harmonic_mean_values() {
        assert_eq!(harmonic_mean(&[3, 1]), 1.5);
        assert_eq!(harmonic_mean(&[8, 8]), 8.0);
        assert!((harmonic_mean(&[8, 2]) - 3.2).abs() < 1e-12);
        assert_eq!(harmonic_mean(&[2, 0]), 0.0);
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
    }

    #[test]
    fn sample_seeds_are_distinct_across_keys() {
        let a = sample_seed(1, 0, 0);
        assert_ne!(a, sample_seed(1, 1, 0));
        assert_ne!(a, sample_seed(1, 0, 1));
        assert_ne!(a, sample_seed(2, 0, 0));
        assert_eq!(a, sample_seed(1, 0, 0));
    }
}
