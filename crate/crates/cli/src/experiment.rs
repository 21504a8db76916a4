use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use ringsim::problems::{make_quadratic, make_softmax_classification};
use ringsim::trace::write_trace_csv;
use ringsim::{
    predicted_iterations, simulate, theory_stepsize, Algorithm, ComplexityMode, PowerProfile, Problem, RunOptions,
    RunTrace, SimError, StopRule, WorkerProfile,
};

use crate::config::{ProblemConfig, RunConfig, StepsizeConfig};
use crate::CliError;

/// ChaCha stream reserved for the compute-time generator.
const TAU_STREAM: u64 = 0x7461_7573;

/// Worker speeds for one run seed.
#[derive(Debug, Clone)]
pub struct Workers {
    pub profiles: Vec<WorkerProfile>,
    /// Fixed compute times, absent under the universal model.
    pub taus: Option<Vec<f64>>,
}

impl Workers {
    pub fn tau_avg(&self) -> Option<f64> {
        self.taus.as_ref().map(|t| t.iter().sum::<f64>() / t.len() as f64)
    }

    pub fn tau_n(&self) -> Option<f64> {
        self.taus.as_ref().map(|t| t.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn mode(&self) -> ComplexityMode {
        if self.taus.is_some() {
            ComplexityMode::Fixed
        } else {
            ComplexityMode::Universal
        }
    }
}

/// `τᵢ = i + |ηᵢ|` with `ηᵢ ~ N(0, i)`, `i = 1..n`, from the seed's own stream.
pub fn paper_taus(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TAU_STREAM);
    (1..=n)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            i as f64 + (i as f64).sqrt() * z.abs()
        })
        .collect()
}

/// Stepsize and horizon derived from the theory formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theory {
    pub gamma: f64,
    pub iterations: u64,
    pub b_lower: f64,
}

/// Sidecar written next to every `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub algorithm: String,
    pub n: usize,
    pub seed: u64,
    pub gamma: f64,
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
    #[serde(default)]
    pub tau_avg: Option<f64>,
    #[serde(default)]
    pub tau_n: Option<f64>,
    #[serde(default)]
    pub theory: Option<Theory>,
    pub updates: usize,
    pub end_time: f64,
    pub discarded_total: u64,
}

impl TraceMeta {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// One finished simulation.
pub struct Outcome {
    pub meta: TraceMeta,
    pub trace: RunTrace,
    pub workers: Workers,
    pub algorithm: Algorithm,
    pub dir: PathBuf,
}

/// A validated config with its problem built.
pub struct Experiment {
    pub config: RunConfig,
    pub problem: Problem,
    /// `σ²` used by the formulas and the condition-based algorithms.
    pub sigma_sq: f64,
}

impl Experiment {
    pub fn new(config: RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        let n = config.workers.n;
        let problem = match config.problem {
            ProblemConfig::Quadratic { d, heterogeneity, seed } => {
                make_quadratic(d, n, heterogeneity, config.sigma_sq.unwrap_or(0.0), seed)
            }
            ProblemConfig::Softmax { features, classes, alpha, samples_per_client, seed } => {
                make_softmax_classification(features, classes, n, alpha, samples_per_client, seed)
            }
        }
        .map_err(CliError::from_sim)?;
        let sigma_sq = config.sigma_sq.unwrap_or(problem.sigma_sq().value);
        Ok(Experiment { config, problem, sigma_sq })
    }

    pub fn workers(&self, seed: u64) -> Result<Workers, CliError> {
        let w = &self.config.workers;
        if let Some(u) = &w.universal {
            let powers = u
                .iter()
                .map(|segs| PowerProfile::new(segs.clone()))
                .collect::<ringsim::Result<Vec<_>>>()
                .map_err(CliError::from_sim)?;
            return Ok(Workers { profiles: WorkerProfile::universal_all(powers), taus: None });
        }
        let taus = match &w.taus {
            Some(t) => t.clone(),
            None => paper_taus(w.n, seed),
        };
        let profiles = WorkerProfile::fixed_all(&taus).map_err(CliError::from_sim)?;
        Ok(Workers { profiles, taus: Some(taus) })
    }

    pub fn algorithm(&self, name: &str) -> Result<Algorithm, CliError> {
        self.config.algorithm_for(name, self.sigma_sq)
    }

    /// Theory stepsize and horizon with `L = L_bound`. Ringleader under fixed
    /// times uses the harmonic-batch floor `max{1, τₙ/(2τ_avg)}`; other
    /// methods use `B = 1`.
    pub fn theory(&self, alg: &Algorithm, workers: &Workers) -> Result<Theory, CliError> {
        let eps = self.config.epsilon.ok_or_else(|| CliError::Config("the theory stepsize needs epsilon".into()))?;
        let delta = self.problem.delta().ok_or_else(|| {
            CliError::Config("the theory horizon needs f(x0) - f*, which this problem does not provide".into())
        })?;
        let n = self.problem.n();
        let l = self.problem.constants().l_bound;
        let mode = workers.mode();
        let b_lower = match (workers.tau_n(), workers.tau_avg()) {
            (Some(tn), Some(ta)) if alg.is_ringleader() => (tn / (2.0 * ta)).max(1.0),
            _ => 1.0,
        };
        Ok(Theory {
            gamma: theory_stepsize(n, l, self.sigma_sq, eps, b_lower, mode),
            iterations: predicted_iterations(n, l, delta, self.sigma_sq, eps, b_lower, mode),
            b_lower,
        })
    }

    pub fn stop_rule(&self, theory: Option<&Theory>) -> StopRule {
        let h = &self.config.horizon;
        StopRule {
            max_events: None,
            max_iterations: h.iterations.or(theory.map(|t| t.iterations)),
            time_budget: h.time_budget,
            target_grad_norm_sq: h.target_grad_norm_sq,
        }
    }

    /// Runs one algorithm for one seed and writes `trace.csv` and `meta.json`
    /// into `dir`. `gamma` overrides the configured policy.
    pub fn execute(
        &self,
        name: &str,
        seed: u64,
        gamma: Option<f64>,
        audit: bool,
        dir: &Path,
    ) -> Result<Outcome, CliError> {
        let algorithm = self.algorithm(name)?;
        let workers = self.workers(seed)?;
        let theory = match (&self.config.stepsize, gamma) {
            (StepsizeConfig::Theory, None) => Some(self.theory(&algorithm, &workers)?),
            _ => None,
        };
        let gamma = match (gamma, &self.config.stepsize, &theory) {
            (Some(g), _, _) => g,
            (None, _, Some(t)) => t.gamma,
            (None, StepsizeConfig::Fixed { gamma }, _) => *gamma,
            (None, StepsizeConfig::Sweep { .. }, _) => {
                return Err(CliError::Config("a sweep policy needs an explicit stepsize per run".into()))
            }
            (None, StepsizeConfig::Theory, None) => unreachable!("theory computed above"),
        };
        let mut opts = RunOptions::new(gamma, seed, self.stop_rule(theory.as_ref()));
        opts.audit = audit;
        let trace = simulate(&self.problem, workers.profiles.clone(), &algorithm, &opts).map_err(|e| match e {
            SimError::NumericDomain(msg) => CliError::Diverged(format!("{name} seed {seed} gamma {gamma}: {msg}")),
            other => CliError::from_sim(other),
        })?;
        let meta = TraceMeta {
            algorithm: name.to_string(),
            n: trace.n,
            seed,
            gamma,
            taus: workers.taus.clone(),
            tau_avg: workers.tau_avg(),
            tau_n: workers.tau_n(),
            theory,
            updates: trace.records.len(),
            end_time: trace.end_time,
            discarded_total: trace.discarded_total,
        };
        fs::create_dir_all(dir)?;
        let file = fs::File::create(dir.join("trace.csv"))?;
        write_trace_csv(&trace.records, std::io::BufWriter::new(file)).map_err(CliError::from_sim)?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
        Ok(Outcome { meta, trace, workers, algorithm, dir: dir.to_path_buf() })
    }
}
