use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{gaussian_vector, Problem, SmoothnessConstants};
use crate::error::{Result, SimError};
use crate::{Matrix, Vector};

/// `fᵢ(x) = ½ xᵀAᵢx + bᵢᵀx` with gradient noise `N(0, (σ²/d)·I)`, so that
/// `E‖noise‖² = σ²` exactly.
#[derive(Debug, Clone)]
pub struct QuadraticEnsemble {
    a: Vec<Matrix>,
    b: Vec<Vector>,
    a_mean: Matrix,
    b_mean: Vector,
    sigma_sq: f64,
    x0: Vector,
    constants: SmoothnessConstants,
    minimizer: Option<Vector>,
}

impl QuadraticEnsemble {
    /// Validates shapes and positive semidefiniteness, computes the exact
    /// constants and, when `(1/n)ΣAᵢ` is nonsingular, the exact minimizer.
    pub fn new(a: Vec<Matrix>, b: Vec<Vector>, sigma_sq: f64, x0: Vector) -> Result<Self> {
        let n = a.len();
        if n == 0 || b.len() != n {
            return Err(SimError::config(format!("need n>=1 matrices and as many vectors (got {n} and {})", b.len())));
        }
        let d = x0.len();
        if d == 0 {
            return Err(SimError::config("dimension must be positive"));
        }
        if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
            return Err(SimError::config(format!("sigma_sq must be finite and >= 0, got {sigma_sq}")));
        }
        let mut per_worker = Vec::with_capacity(n);
        for (i, (ai, bi)) in a.iter().zip(&b).enumerate() {
            if ai.nrows() != d || ai.ncols() != d || bi.len() != d {
                return Err(SimError::config(format!("worker {i}: shapes do not match dimension {d}")));
            }
            let scale = ai.amax().max(1.0);
            if (ai - ai.transpose()).amax() > 1e-12 * scale {
                return Err(SimError::config(format!("worker {i}: matrix is not symmetric")));
            }
            let eig = SymmetricEigen::new(ai.clone()).eigenvalues;
            if eig.iter().any(|&l| l < -1e-12 * scale) {
                return Err(SimError::config(format!("worker {i}: matrix is not positive semidefinite")));
            }
            per_worker.push(eig.iter().copied().fold(0.0, f64::max));
        }
        let a_mean = a.iter().fold(Matrix::zeros(d, d), |acc, m| acc + m) / n as f64;
        let b_mean = b.iter().fold(Vector::zeros(d), |acc, v| acc + v) / n as f64;
        let eig = SymmetricEigen::new(a_mean.clone()).eigenvalues;
        let l_f = eig.iter().copied().fold(0.0, f64::max);
        let l_min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let minimizer = if l_min > 1e-12 * l_f.max(f64::MIN_POSITIVE) {
            a_mean.clone().cholesky().map(|c| -c.solve(&b_mean))
        } else {
            None
        };
        let constants = if n == 1 {
            // avoid sqrt(L²) rounding so that L_f = L_bound = L_max exactly
            SmoothnessConstants { l_f, l_bound: per_worker[0], l_max: per_worker[0], per_worker, exact: true }
        } else {
            SmoothnessConstants::from_parts(l_f, per_worker, true)
        };
        Ok(QuadraticEnsemble { a, b, a_mean, b_mean, sigma_sq, x0, constants, minimizer })
    }

    pub fn with_initial_point(mut self, x0: Vector) -> Result<Self> {
        if x0.len() != self.dim() {
            return Err(SimError::config("initial point has the wrong dimension"));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn with_sigma_sq(mut self, sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
            return Err(SimError::config(format!("sigma_sq must be finite and >= 0, got {sigma_sq}")));
        }
        self.sigma_sq = sigma_sq;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn initial_point(&self) -> &Vector {
        &self.x0
    }

    pub fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.a
    }

    pub fn offsets(&self) -> &[Vector] {
        &self.b
    }

    /// Mean Hessian `(1/n) Σ Aᵢ`.
    pub fn mean_matrix(&self) -> &Matrix {
        &self.a_mean
    }

    pub fn mean_offset(&self) -> &Vector {
        &self.b_mean
    }

    pub fn minimizer(&self) -> Option<&Vector> {
        self.minimizer.as_ref()
    }

    pub fn require_minimizer(&self) -> Result<&Vector> {
        self.minimizer
            .as_ref()
            .ok_or_else(|| SimError::config("mean Hessian is singular: no unique minimizer"))
    }

    pub fn f_star(&self) -> Option<f64> {
        self.minimizer.as_ref().map(|xs| self.value(xs))
    }

    pub fn local_value(&self, i: usize, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.a[i] * x)) + self.b[i].dot(x)
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.a_mean * x)) + self.b_mean.dot(x)
    }

    pub fn local_grad(&self, i: usize, x: &Vector) -> Vector {
        &self.a[i] * x + &self.b[i]
    }

    pub fn full_grad(&self, x: &Vector) -> Vector {
        &self.a_mean * x + &self.b_mean
    }

    /// The additive noise of the sample keyed by `sample_seed`.
    pub fn noise(&self, sample_seed: u64) -> Vector {
        if self.sigma_sq == 0.0 {
            return Vector::zeros(self.dim());
        }
        let scale = (self.sigma_sq / self.dim() as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        Vector::from_fn(self.dim(), |_, _| scale * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn stochastic_grad(&self, i: usize, x: &Vector, sample_seed: u64) -> Vector {
        let mut g = self.local_grad(i, x);
        if self.sigma_sq > 0.0 {
            g += self.noise(sample_seed);
        }
        g
    }
}

/// Random quadratic ensemble.
///
/// Worker `i` gets `Aᵢ = Qᵢ diag(λ) Qᵢᵀ` with a random rotation `Qᵢ` and
/// eigenvalues `(1+h)^{2u−1}`, `u ~ U[0,1]`, so the spectrum spans
/// `[1/(1+h), 1+h]`; offsets are `bᵢ = b + h·zᵢ` around a shared `b`. With
/// `h = 0` every worker holds the identical objective `½‖x‖² + bᵀx`.
pub fn make_quadratic(d: usize, n: usize, heterogeneity: f64, sigma_sq: f64, seed: u64) -> Result<Problem> {
    if d == 0 || n == 0 {
        return Err(SimError::config("make_quadratic needs d >= 1 and n >= 1"));
    }
    if !(heterogeneity >= 0.0 && heterogeneity.is_finite()) {
        return Err(SimError::config("heterogeneity must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
    let shared_b = Vector::from_fn(d, |_, _| gauss(&mut rng));
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let g = Matrix::from_fn(d, d, |_, _| gauss(&mut rng));
        let q = g.qr().q();
        let lambdas = Vector::from_fn(d, |_, _| (1.0 + heterogeneity).powf(2.0 * rng.random::<f64>() - 1.0));
        let ai = &q * Matrix::from_diagonal(&lambdas) * q.transpose();
        a.push((&ai + ai.transpose()) * 0.5);
        b.push(&shared_b + Vector::from_fn(d, |_, _| heterogeneity * gauss(&mut rng)));
    }
    let x0 = gaussian_vector(d, 2.0, seed ^ 0xA5A5_A5A5);
    let q = QuadraticEnsemble::new(a, b, sigma_sq, x0)?;
    q.require_minimizer()?;
    Ok(Problem::Quadratic(q))
}
