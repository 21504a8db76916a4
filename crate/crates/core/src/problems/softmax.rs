use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{equal_size_dirichlet, DirichletPartition, Problem, SmoothnessConstants};
use crate::error::{Result, SimError};
use crate::numeric::{mix64, quantile};
use crate::{Matrix, Vector};

/// Samples per stochastic gradient, drawn with replacement from the client shard.
pub const SOFTMAX_MINIBATCH: usize = 4;

const PROBE_POINTS: usize = 16;
const MEAN_RADIUS: f64 = 3.0;

/// Linear softmax classifier with a bias column, trained with mean
/// cross-entropy on per-client shards.
///
/// The parameter vector is the column-major flattening of the
/// `classes × (features + 1)` weight matrix.
#[derive(Debug, Clone)]
pub struct SoftmaxProblem {
    classes: usize,
    features: usize,
    /// Per client: design matrix with a trailing column of ones.
    inputs: Vec<Matrix>,
    labels: Vec<Vec<usize>>,
    x0: Vector,
    constants: SmoothnessConstants,
    sigma_sq: f64,
    partition: DirichletPartition,
}

fn softmax_rows(logits: &mut Matrix) {
    for mut row in logits.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

fn lambda_max(m: &Matrix) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(0.0, f64::max)
}

impl SoftmaxProblem {
    pub fn dim(&self) -> usize {
        self.classes * (self.features + 1)
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn initial_point(&self) -> &Vector {
        &self.x0
    }

    pub fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }

    pub fn sigma_sq_estimate(&self) -> f64 {
        self.sigma_sq
    }

    pub fn partition(&self) -> &DirichletPartition {
        &self.partition
    }

    fn weights(&self, x: &Vector) -> Matrix {
        Matrix::from_column_slice(self.classes, self.features + 1, x.as_slice())
    }

    fn probabilities(&self, i: usize, w: &Matrix) -> Matrix {
        let mut p = &self.inputs[i] * w.transpose();
        softmax_rows(&mut p);
        p
    }

    pub fn local_value(&self, i: usize, x: &Vector) -> f64 {
        let logits = &self.inputs[i] * self.weights(x).transpose();
        let mut total = 0.0;
        for (r, row) in logits.row_iter().enumerate() {
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[self.labels[i][r]];
        }
        total / logits.nrows() as f64
    }

    /// Gradient of the mean cross-entropy over the given rows of shard `i`.
    fn grad_on_rows(&self, i: usize, w: &Matrix, rows: &[usize]) -> Vector {
        let x_i = &self.inputs[i];
        let mut g = Matrix::zeros(self.classes, self.features + 1);
        for &r in rows {
            let feats = x_i.row(r);
            let mut resid = w * feats.transpose();
            let m = resid.max();
            resid.apply(|v| *v = (*v - m).exp());
            resid /= resid.sum();
            resid[self.labels[i][r]] -= 1.0;
            g += resid * feats;
        }
        g /= rows.len() as f64;
        Vector::from_column_slice(g.as_slice())
    }

    pub fn local_grad(&self, i: usize, x: &Vector) -> Vector {
        let w = self.weights(x);
        let mut p = self.probabilities(i, &w);
        for (r, &y) in self.labels[i].iter().enumerate() {
            p[(r, y)] -= 1.0;
        }
        let g = p.transpose() * &self.inputs[i] / self.inputs[i].nrows() as f64;
        Vector::from_column_slice(g.as_slice())
    }

    pub fn stochastic_grad(&self, i: usize, x: &Vector, sample_seed: u64) -> Vector {
        let m = self.inputs[i].nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let rows: Vec<usize> = (0..SOFTMAX_MINIBATCH).map(|_| rng.random_range(0..m)).collect();
        self.grad_on_rows(i, &self.weights(x), &rows)
    }

    /// Exact variance of the minibatch estimator of `∇fᵢ(x)`: the per-sample
    /// variance over the shard divided by the minibatch size.
    pub fn minibatch_variance(&self, i: usize, x: &Vector) -> f64 {
        let w = self.weights(x);
        let full = self.local_grad(i, x);
        let m = self.inputs[i].nrows();
        let per_sample: f64 = (0..m).map(|r| (self.grad_on_rows(i, &w, &[r]) - &full).norm_squared()).sum::<f64>() / m as f64;
        per_sample / SOFTMAX_MINIBATCH as f64
    }
}

/// Synthetic Gaussian-mixture classification split across `n` clients.
///
/// Class means lie on a sphere of radius 3 in `R^d` with unit covariance;
/// labels cycle through the classes so the global histogram is balanced.
/// Shards come from [`equal_size_dirichlet`]. Smoothness constants are the
/// bounds `½ λmax(XᵢᵀXᵢ/m)` (`exact = false`), and `σ²` is the 95th
/// percentile of the exact minibatch variance over a fixed probe grid.
pub fn make_softmax_classification(
    d: usize,
    classes: usize,
    n: usize,
    alpha: f64,
    samples_per_client: usize,
    seed: u64,
) -> Result<Problem> {
    if classes < 2 {
        return Err(SimError::config("softmax problem needs at least 2 classes"));
    }
    if d == 0 || n == 0 || samples_per_client == 0 {
        return Err(SimError::config("softmax problem needs d, n and samples_per_client >= 1"));
    }
    let total = samples_per_client * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
    let means: Vec<Vector> = (0..classes)
        .map(|_| {
            let v = Vector::from_fn(d, |_, _| gauss(&mut rng));
            v.normalize() * MEAN_RADIUS
        })
        .collect();
    let labels: Vec<usize> = (0..total).map(|k| k % classes).collect();
    let features: Vec<Vector> = labels.iter().map(|&y| &means[y] + Vector::from_fn(d, |_, _| gauss(&mut rng))).collect();
    let partition = equal_size_dirichlet(&labels, classes, n, alpha, mix64(seed))?;

    let mut inputs = Vec::with_capacity(n);
    let mut shard_labels = Vec::with_capacity(n);
    for shard in &partition.shards {
        let x = Matrix::from_fn(shard.len(), d + 1, |r, c| if c < d { features[shard[r]][c] } else { 1.0 });
        inputs.push(x);
        shard_labels.push(shard.iter().map(|&k| labels[k]).collect::<Vec<_>>());
    }
    let grams: Vec<Matrix> = inputs.iter().map(|x| x.transpose() * x / x.nrows() as f64).collect();
    let per_worker: Vec<f64> = grams.iter().map(|g| 0.5 * lambda_max(g)).collect();
    let mean_gram = grams.iter().fold(Matrix::zeros(d + 1, d + 1), |acc, g| acc + g) / n as f64;
    let constants = SmoothnessConstants::from_parts(0.5 * lambda_max(&mean_gram), per_worker, false);

    let dim = classes * (d + 1);
    let mut problem = SoftmaxProblem {
        classes,
        features: d,
        inputs,
        labels: shard_labels,
        x0: Vector::zeros(dim),
        constants,
        sigma_sq: 0.0,
        partition,
    };
    let mut probe_rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x0050_5242));
    let mut variances = Vec::with_capacity(PROBE_POINTS * n);
    for p in 0..PROBE_POINTS {
        let x = if p == 0 { Vector::zeros(dim) } else { Vector::from_fn(dim, |_, _| probe_rng.sample::<f64, _>(StandardNormal)) };
        for i in 0..n {
            variances.push(problem.minibatch_variance(i, &x));
        }
    }
    problem.sigma_sq = quantile(&variances, 0.95);
    Ok(Problem::Softmax(problem))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Problem {
        make_softmax_classification(3, 3, 4, 0.5, 20, 7).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Vector::from_fn(p.dim(), |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
        let g = p.local_grad(1, &x);
        let h = 1e-6;
        for k in 0..p.dim() {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (p.local_value(1, &xp) - p.local_value(1, &xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6, "coord {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn initial_loss_is_log_classes() {
        let p = small();
        assert!((p.value(p.initial_point()) - 3f64.ln()).abs() < 1e-12);
        assert!(p.delta().unwrap() > 0.0);
    }

    #[test]
    fn shards_are_equal_and_constants_are_bounds() {
        let p = small();
        let Problem::Softmax(s) = &p else { unreachable!() };
        assert!(s.partition().shards.iter().all(|sh| sh.len() == 20));
        assert!(!p.constants().exact);
        assert!(!p.sigma_sq().exact);
        assert!(p.sigma_sq().value > 0.0);
        assert!(p.constants().ordering_holds());
    }

    #[test]
    fn minibatch_mean_is_local_gradient() {
        let p = small();
        let Problem::Softmax(s) = &p else { unreachable!() };
        let x = Vector::from_element(p.dim(), 0.1);
        let draws = 20_000;
        let mut mean = Vector::zeros(p.dim());
        for k in 0..draws {
            mean += s.stochastic_grad(2, &x, mix64(k));
        }
        mean /= draws as f64;
        let sd = (s.minibatch_variance(2, &x) / draws as f64).sqrt();
        assert!((mean - p.local_grad(2, &x)).norm() <= 6.0 * sd);
    }

    #[test]
    fn cross_entropy_smoothness_bound_holds() {
        let p = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = Vector::from_fn(p.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = Vector::from_fn(p.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
            for i in 0..p.n() {
                let lhs = (p.local_grad(i, &x) - p.local_grad(i, &y)).norm();
                assert!(lhs <= p.constants().per_worker[i] * (x.clone() - &y).norm() * (1.0 + 1e-9));
            }
        }
    }
}
