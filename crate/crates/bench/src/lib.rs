//! Workloads shared by the criterion benches.

use ringsim::problems::make_quadratic;
use ringsim::{Problem, WorkerProfile};

/// Quadratic problem of dimension `d` with `n` workers at `τᵢ = 1 + i/n`.
pub fn workload(n: usize, d: usize) -> (Problem, Vec<WorkerProfile>) {
    let problem = make_quadratic(d, n, 1.0, 1.0, 42).expect("valid quadratic");
    let taus: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
    (problem, WorkerProfile::fixed_all(&taus).expect("positive taus"))
}
