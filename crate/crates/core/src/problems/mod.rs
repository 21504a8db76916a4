//! Finite-sum objectives `f = (1/n) Σ fᵢ` with stochastic gradient oracles.
//!
//! Two families are provided: [`QuadraticEnsemble`], whose constants,
//! minimizer and noise are all exact, and [`SoftmaxProblem`], a linear
//! softmax classifier over a Dirichlet-skewed synthetic dataset whose
//! constants are upper bounds and whose `σ²` is an empirical estimate.

mod partition;
mod quadratic;
mod softmax;

pub use partition::{allocate_with_topup, equal_size_dirichlet, rounded_allocation, DirichletPartition};
pub use quadratic::{make_quadratic, QuadraticEnsemble};
pub use softmax::{make_softmax_classification, SoftmaxProblem, SOFTMAX_MINIBATCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::Vector;

/// Smoothness constants of the ensemble.
///
/// `l_bound` is `√((1/n) Σ L_{fᵢ}²)`, the computable upper bound on the
/// joint smoothness constant `L`; it is what every theory stepsize uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub l_f: f64,
    pub l_bound: f64,
    pub l_max: f64,
    pub per_worker: Vec<f64>,
    /// `false` when the values are upper bounds rather than exact eigenvalues.
    pub exact: bool,
}

impl SmoothnessConstants {
    pub fn from_parts(l_f: f64, per_worker: Vec<f64>, exact: bool) -> Self {
        let n = per_worker.len().max(1) as f64;
        let l_bound = (per_worker.iter().map(|l| l * l).sum::<f64>() / n).sqrt();
        let l_max = per_worker.iter().copied().fold(0.0, f64::max);
        SmoothnessConstants { l_f, l_bound, l_max, per_worker, exact }
    }

    /// `L_f ≤ L_bound ≤ L_max`, up to a relative rounding slack.
    pub fn ordering_holds(&self) -> bool {
        let tol = 1e-10 * self.l_max.max(1.0);
        self.l_f <= self.l_bound + tol && self.l_bound <= self.l_max + tol
    }
}

/// Variance bound `σ²` of the stochastic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSq {
    pub value: f64,
    /// `false` for empirical estimates.
    pub exact: bool,
}

/// The objective handed to a simulation.
#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(QuadraticEnsemble),
    Softmax(SoftmaxProblem),
}

/// Serializable description of a problem instance, for run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub kind: String,
    pub dim: usize,
    pub workers: usize,
    pub constants: SmoothnessConstants,
    pub sigma_sq: SigmaSq,
    pub f_x0: f64,
    pub f_star_lower: Option<f64>,
    pub delta: Option<f64>,
    pub grad_norm_sq_x0: f64,
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.dim(),
            Problem::Softmax(s) => s.dim(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.n(),
            Problem::Softmax(s) => s.n(),
        }
    }

    pub fn initial_point(&self) -> &Vector {
        match self {
            Problem::Quadratic(q) => q.initial_point(),
            Problem::Softmax(s) => s.initial_point(),
        }
    }

    pub fn constants(&self) -> &SmoothnessConstants {
        match self {
            Problem::Quadratic(q) => q.constants(),
            Problem::Softmax(s) => s.constants(),
        }
    }

    pub fn sigma_sq(&self) -> SigmaSq {
        match self {
            Problem::Quadratic(q) => SigmaSq { value: q.sigma_sq(), exact: true },
            Problem::Softmax(s) => SigmaSq { value: s.sigma_sq_estimate(), exact: false },
        }
    }

    /// Known lower bound on `f*` (exact for quadratics, 0 for cross-entropy).
    pub fn f_star_lower(&self) -> Option<f64> {
        match self {
            Problem::Quadratic(q) => q.f_star(),
            Problem::Softmax(_) => Some(0.0),
        }
    }

    pub fn local_value(&self, i: usize, x: &Vector) -> f64 {
        match self {
            Problem::Quadratic(q) => q.local_value(i, x),
            Problem::Softmax(s) => s.local_value(i, x),
        }
    }

    pub fn local_grad(&self, i: usize, x: &Vector) -> Vector {
        match self {
            Problem::Quadratic(q) => q.local_grad(i, x),
            Problem::Softmax(s) => s.local_grad(i, x),
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        (0..self.n()).map(|i| self.local_value(i, x)).sum::<f64>() / self.n() as f64
    }

    /// `∇f(x) = (1/n) Σ ∇fᵢ(x)`.
    pub fn full_grad(&self, x: &Vector) -> Vector {
        match self {
            Problem::Quadratic(q) => q.full_grad(x),
            Problem::Softmax(_) => {
                let mut g = Vector::zeros(self.dim());
                for i in 0..self.n() {
                    g += self.local_grad(i, x);
                }
                g / self.n() as f64
            }
        }
    }

    /// `Δ = f(x⁰) − f*` (an upper bound when `f*` is only a lower bound).
    pub fn delta(&self) -> Option<f64> {
        self.f_star_lower().map(|fs| self.value(self.initial_point()) - fs)
    }

    /// `∇fᵢ(x; ξ)` for the sample keyed by `sample_seed`.
    pub fn stochastic_gradient(&self, worker: usize, x: &Vector, sample_seed: u64) -> Result<Vector> {
        if worker >= self.n() {
            return Err(SimError::config(format!("worker {worker} out of range for n={}", self.n())));
        }
        if x.len() != self.dim() {
            return Err(SimError::config(format!("point has dimension {}, expected {}", x.len(), self.dim())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NumericDomain(format!("non-finite iterate passed to worker {worker}")));
        }
        Ok(match self {
            Problem::Quadratic(q) => q.stochastic_grad(worker, x, sample_seed),
            Problem::Softmax(s) => s.stochastic_grad(worker, x, sample_seed),
        })
    }

    pub fn summary(&self) -> ProblemSummary {
        let x0 = self.initial_point();
        ProblemSummary {
            kind: match self {
                Problem::Quadratic(_) => "quadratic".into(),
                Problem::Softmax(_) => "softmax".into(),
            },
            dim: self.dim(),
            workers: self.n(),
            constants: self.constants().clone(),
            sigma_sq: self.sigma_sq(),
            f_x0: self.value(x0),
            f_star_lower: self.f_star_lower(),
            delta: self.delta(),
            grad_norm_sq_x0: self.full_grad(x0).norm_squared(),
        }
    }
}

/// One sampled tuple that broke the joint smoothness inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessWitness {
    pub x: Vector,
    pub ys: Vec<Vector>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessReport {
    pub trials: usize,
    pub ordering_holds: bool,
    pub violations: Vec<SmoothnessWitness>,
    /// Largest observed `lhs / rhs` over trials with `rhs > 0`.
    pub worst_ratio: f64,
}

impl SmoothnessReport {
    pub fn passed(&self) -> bool {
        self.ordering_holds && self.violations.is_empty()
    }
}

/// Samples `(x, y₁..yₙ)` tuples and checks
/// `‖∇f(x) − (1/n)Σ∇fᵢ(yᵢ)‖² ≤ (L²/n) Σ‖x − yᵢ‖²` with `L = l_bound`.
///
/// A third of the trials use `yᵢ` close to `x` to probe the local regime.
pub fn verify_smoothness_ordering(problem: &Problem, trials: usize, seed: u64) -> SmoothnessReport {
    let n = problem.n();
    let d = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |scale: f64, rng: &mut ChaCha8Rng| -> Vector {
        Vector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
    };
    let mut violations = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for t in 0..trials {
        let x = gauss(3.0, &mut rng);
        let spread = if t % 3 == 0 { 1e-3 } else { 3.0 };
        let ys: Vec<Vector> = (0..n).map(|_| &x + gauss(spread, &mut rng)).collect();
        let (lhs, rhs) = joint_smoothness_sides(problem, &x, &ys);
        if rhs > 0.0 {
            worst_ratio = worst_ratio.max(lhs / rhs);
        }
        if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
            violations.push(SmoothnessWitness { x, ys, lhs, rhs });
        }
    }
    SmoothnessReport { trials, ordering_holds: problem.constants().ordering_holds(), violations, worst_ratio }
}

/// Left and right side of the joint smoothness inequality at a given tuple.
pub fn joint_smoothness_sides(problem: &Problem, x: &Vector, ys: &[Vector]) -> (f64, f64) {
    let n = problem.n();
    let l = problem.constants().l_bound;
    let mut mixed = Vector::zeros(problem.dim());
    for (i, y) in ys.iter().enumerate() {
        mixed += problem.local_grad(i, y);
    }
    mixed /= n as f64;
    let lhs = (problem.full_grad(x) - mixed).norm_squared();
    let rhs = l * l / n as f64 * ys.iter().map(|y| (x - y).norm_squared()).sum::<f64>();
    (lhs, rhs)
}

pub(crate) fn gaussian_vector(d: usize, scale: f64, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Vector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}
