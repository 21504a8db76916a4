use crate::timeline::{ComputeModel, WorkerProfile};
use crate::VirtualTime;

/// Piecewise-constant power as plain `(start, rate)` breakpoints.
fn breakpoints(profile: &WorkerProfile) -> Vec<(f64, f64)> {
    match &profile.model {
        ComputeModel::Fixed { tau } => vec![(0.0, 1.0 / tau)],
        ComputeModel::Universal(p) => p.segments().iter().map(|s| (s.start, s.rate)).collect(),
    }
}

/// Earliest `t ≥ from` with `∫_from^t p = units`, walking the segments.
fn crossing(segs: &[(f64, f64)], from: f64, units: f64) -> Option<f64> {
    let mut acc = 0.0;
    for (j, &(start, rate)) in segs.iter().enumerate() {
        let end = segs.get(j + 1).map_or(f64::INFINITY, |s| s.0);
        if end <= from {
            continue;
        }
        let lo = start.max(from);
        if rate <= 0.0 {
            continue;
        }
        let gain = rate * (end - lo);
        if acc + gain >= units {
            return Some(lo + (units - acc) / rate);
        }
        acc += gain;
    }
    None
}

/// The recursion `T⁰ = 0`,
/// `Tᵏ = min{T : ((1/n) Σᵢ ⌊∫_{Tᵏ⁻¹}^T pᵢ⌋⁻¹)⁻¹ ≥ max{1, σ²/(nε)}}`,
/// up to index `k_max`. An entry is `None` once the threshold can no longer be met.
///
/// Counts only change where some worker's integral crosses an integer, so
/// the walk jumps between those crossings in time order.
pub fn t_sequence(profiles: &[WorkerProfile], sigma_sq: f64, epsilon: f64, k_max: usize) -> Vec<Option<VirtualTime>> {
    let n = profiles.len();
    let threshold = if sigma_sq > 0.0 { (sigma_sq / (n as f64 * epsilon)).max(1.0) } else { 1.0 };
    let segs: Vec<Vec<(f64, f64)>> = profiles.iter().map(breakpoints).collect();
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(Some(0.0));
    let mut prev = 0.0;
    for _ in 0..k_max {
        let mut counts = vec![0u64; n];
        let mut next: Vec<Option<f64>> = segs.iter().map(|s| crossing(s, prev, 1.0)).collect();
        let mut reached = None;
        loop {
            // workers with no further crossing are frozen; if even unbounded
            // counts elsewhere cannot lift the harmonic mean past the threshold, stop
            let frozen: f64 = (0..n).filter(|&i| next[i].is_none()).map(|i| 1.0 / counts[i] as f64).sum();
            if frozen > 0.0 && n as f64 / frozen <= threshold {
                break;
            }
            let Some((i, t)) = next
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.map(|t| (i, t)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            else {
                break;
            };
            counts[i] += 1;
            next[i] = crossing(&segs[i], prev, (counts[i] + 1) as f64);
            if counts.iter().all(|&c| c > 0) {
                let inv: f64 = counts.iter().map(|&c| 1.0 / c as f64).sum();
                if n as f64 / inv >= threshold {
                    reached = Some(t);
                    break;
                }
            }
        }
        match reached {
            Some(t) => {
                out.push(Some(t));
                prev = t;
            }
            None => {
                out.resize(k_max + 1, None);
                break;
            }
        }
    }
    out
}

/// Recursion index bounding the time of the `k`-th update: `2⌈k/n⌉`, which
/// equals `⌈2k/n⌉` whenever `n` divides `k`.
pub fn theorem3_index(k: u64, n: usize) -> u64 {
    2 * k.div_ceil(n as u64)
}
