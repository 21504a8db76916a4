use super::Finding;
use crate::error::{Result, SimError};
use crate::numeric::sample_seed;
use crate::problems::Problem;
use crate::trace::{IterationRecord, RunTrace};
use crate::Vector;

const CHECK: &str = "variance-surrogate";
const SLACK: f64 = 1.1;

/// Monte Carlo estimate of `E‖ḡᵏ − (1/n) Σᵢ ∇fᵢ(x^{k−δᵢ})‖²` for the batch
/// shape in `record`, where `ḡᵏ = (1/n) Σᵢ (1/bᵢ) Σⱼ ∇fᵢ(x^{k−δᵢ}; ξᵢⱼ)` is
/// redrawn `draws` times. Returns `(empirical, σ²/(nBᵏ))`.
pub fn estimator_second_moment(
    problem: &Problem,
    iterates: &[Vector],
    record: &IterationRecord,
    draws: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = problem.n();
    if record.delays.len() != n || record.batches.len() != n {
        return Err(SimError::Invariant(format!("record {} does not have {n} workers", record.iteration)));
    }
    if draws == 0 {
        return Err(SimError::config("need at least one draw"));
    }
    let mut points = Vec::with_capacity(n);
    for (i, &delay) in record.delays.iter().enumerate() {
        let idx = record.iteration.checked_sub(delay).ok_or_else(|| {
            SimError::Invariant(format!("record {}: delay {delay} of worker {i} predates x0", record.iteration))
        })?;
        let x = iterates
            .get(idx as usize)
            .ok_or_else(|| SimError::Invariant(format!("iterate {idx} not recorded")))?;
        points.push(x);
    }
    let mut mean_grad = Vector::zeros(problem.dim());
    for (i, x) in points.iter().enumerate() {
        mean_grad += problem.local_grad(i, x);
    }
    mean_grad /= n as f64;

    let mut counter = 0u64;
    let mut total = 0.0;
    for _ in 0..draws {
        let mut est = Vector::zeros(problem.dim());
        for (i, x) in points.iter().enumerate() {
            let b = record.batches[i];
            let mut g = Vector::zeros(problem.dim());
            for _ in 0..b {
                g += problem.stochastic_gradient(i, x, sample_seed(seed, i, counter))?;
                counter += 1;
            }
            est.axpy(1.0 / b as f64, &g, 1.0);
        }
        est /= n as f64;
        total += (est - &mean_grad).norm_squared();
    }
    let bound = problem.sigma_sq().value / (n as f64 * record.harmonic_batch);
    Ok((total / draws as f64, bound))
}

/// Checks the second moment against `1.1·σ²/(nBᵏ)` at `samples` evenly
/// spaced iterations of an audited trace.
pub fn check_variance_surrogate(trace: &RunTrace, problem: &Problem, samples: usize, draws: u64, seed: u64) -> Finding {
    let Some(iterates) = &trace.iterates else {
        return Finding::fail(CHECK, "trace has no iterates; rerun with audit enabled");
    };
    if trace.records.is_empty() || samples == 0 {
        return Finding::new(CHECK, super::Status::Inconclusive, "no iterations to sample");
    }
    let m = trace.records.len();
    let picks: Vec<usize> = if samples >= m { (0..m).collect() } else { (0..samples).map(|s| s * (m - 1) / (samples - 1).max(1)).collect() };
    let mut worst = 0.0f64;
    for &k in &picks {
        let rec = &trace.records[k];
        let (emp, bound) = match estimator_second_moment(problem, iterates, rec, draws, seed ^ k as u64) {
            Ok(v) => v,
            Err(e) => return Finding::fail(CHECK, e.to_string()),
        };
        if emp > SLACK * bound {
            return Finding::fail(
                CHECK,
                format!("iteration {}: empirical {emp:.6e} > {SLACK} * {bound:.6e} (B = {})", rec.iteration, rec.harmonic_batch),
            );
        }
        if bound > 0.0 {
            worst = worst.max(emp / bound);
        }
    }
    Finding::pass(CHECK, format!("{} iterations, worst ratio {worst:.4}", picks.len()))
}
