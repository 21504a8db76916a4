//! Server state machines for Ringleader ASGD and its baselines.
//!
//! Every server implements [`Server`] and is driven by the [`Timeline`]. The
//! servers share [`ServerCore`], which owns the iterate, the per-worker model
//! copies and the event log, and computes each stochastic gradient at the
//! model copy the sending worker was given.

mod ia2sgd;
mod malenia;
mod minibatch;
mod ringleader;
mod table;
mod theory;

pub use ia2sgd::Ia2sgdServer;
pub use malenia::MaleniaServer;
pub use minibatch::MinibatchServer;
pub use ringleader::{Phase, RingleaderServer};
pub use table::GradientTable;
pub use theory::{predicted_iterations, theory_stepsize, ComplexityMode};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::numeric::harmonic_mean;
use crate::problems::Problem;
use crate::timeline::{GradientEvent, Server, StopRule, Timeline, WorkerProfile};
use crate::trace::{Disposition, EventLogEntry, RunTrace};
use crate::Vector;

/// When a collection phase may end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingRule {
    /// Every worker has delivered at least one gradient.
    AllWorkersOnce,
    /// All `bᵢ ≥ 1` and `((1/n) Σ 1/bᵢ)⁻¹ ≥ max{1, σ²/(nε)}`.
    MaleniaCondition { sigma_sq: f64, epsilon: f64 },
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        if let StoppingRule::MaleniaCondition { sigma_sq, epsilon } = *self {
            if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
                return Err(SimError::config(format!("sigma_sq must be finite and >= 0, got {sigma_sq}")));
            }
            if sigma_sq > 0.0 && !(epsilon > 0.0) {
                return Err(SimError::config(format!("epsilon must be > 0 when sigma_sq > 0, got {epsilon}")));
            }
        }
        Ok(())
    }

    /// Required harmonic-mean batch `max{1, σ²/(nε)}`.
    pub fn threshold(&self, n: usize) -> f64 {
        match *self {
            StoppingRule::AllWorkersOnce => 1.0,
            StoppingRule::MaleniaCondition { sigma_sq, epsilon } => {
                if sigma_sq == 0.0 {
                    1.0
                } else {
                    (sigma_sq / (n as f64 * epsilon)).max(1.0)
                }
            }
        }
    }

    pub fn fires(&self, counts: &[u64]) -> bool {
        if counts.contains(&0) {
            return false;
        }
        match self {
            StoppingRule::AllWorkersOnce => true,
            StoppingRule::MaleniaCondition { .. } => harmonic_mean(counts) >= self.threshold(counts.len()),
        }
    }
}

/// The simulated methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Algorithm {
    Ringleader,
    /// Ringleader with the Malenia stopping condition in its collection phase.
    RingleaderUniversal { sigma_sq: f64, epsilon: f64 },
    Malenia { sigma_sq: f64, epsilon: f64 },
    MaleniaParameterFree,
    Ia2sgd,
    Minibatch,
}

impl Algorithm {
    pub const NAMES: [&'static str; 6] =
        ["ringleader", "ringleader-universal", "malenia", "malenia-parameter-free", "ia2sgd", "minibatch"];

    /// Builds an algorithm from its kebab-case name; `σ²` and `ε` are used
    /// only by the condition-based variants.
    pub fn from_name(name: &str, sigma_sq: f64, epsilon: f64) -> Result<Algorithm> {
        let alg = match name {
            "ringleader" => Algorithm::Ringleader,
            "ringleader-universal" => Algorithm::RingleaderUniversal { sigma_sq, epsilon },
            "malenia" => Algorithm::Malenia { sigma_sq, epsilon },
            "malenia-parameter-free" => Algorithm::MaleniaParameterFree,
            "ia2sgd" => Algorithm::Ia2sgd,
            "minibatch" => Algorithm::Minibatch,
            other => {
                return Err(SimError::config(format!(
                    "unknown algorithm {other:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        alg.stopping_rule().map(|r| r.validate()).transpose()?;
        Ok(alg)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Ringleader => "ringleader",
            Algorithm::RingleaderUniversal { .. } => "ringleader-universal",
            Algorithm::Malenia { .. } => "malenia",
            Algorithm::MaleniaParameterFree => "malenia-parameter-free",
            Algorithm::Ia2sgd => "ia2sgd",
            Algorithm::Minibatch => "minibatch",
        }
    }

    /// Collection-phase rule for the table-based methods.
    pub fn stopping_rule(&self) -> Option<StoppingRule> {
        match *self {
            Algorithm::Ringleader | Algorithm::MaleniaParameterFree => Some(StoppingRule::AllWorkersOnce),
            Algorithm::RingleaderUniversal { sigma_sq, epsilon } | Algorithm::Malenia { sigma_sq, epsilon } => {
                Some(StoppingRule::MaleniaCondition { sigma_sq, epsilon })
            }
            Algorithm::Ia2sgd | Algorithm::Minibatch => None,
        }
    }

    pub fn is_ringleader(&self) -> bool {
        matches!(self, Algorithm::Ringleader | Algorithm::RingleaderUniversal { .. })
    }
}

/// Parameters of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub gamma: f64,
    pub seed: u64,
    pub stop: StopRule,
    /// Keep every iterate and update direction for offline replay.
    pub audit: bool,
}

impl RunOptions {
    pub fn new(gamma: f64, seed: u64, stop: StopRule) -> Self {
        RunOptions { gamma, seed, stop, audit: false }
    }

    pub fn with_audit(mut self) -> Self {
        self.audit = true;
        self
    }
}

/// State shared by all servers.
#[derive(Debug, Clone)]
pub struct ServerCore<'p> {
    problem: &'p Problem,
    x: Vector,
    k: u64,
    gamma: f64,
    models: Vec<Vector>,
    stamps: Vec<u64>,
    events: Vec<EventLogEntry>,
    iterates: Option<Vec<Vector>>,
    directions: Option<Vec<Vector>>,
}

impl<'p> ServerCore<'p> {
    pub fn new(problem: &'p Problem, gamma: f64, audit: bool) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(SimError::config(format!("stepsize must be positive and finite, got {gamma}")));
        }
        let x = problem.initial_point().clone();
        let n = problem.n();
        Ok(ServerCore {
            problem,
            models: vec![x.clone(); n],
            stamps: vec![0; n],
            iterates: audit.then(|| vec![x.clone()]),
            directions: audit.then(Vec::new),
            x,
            k: 0,
            gamma,
            events: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.models.len()
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn iteration(&self) -> u64 {
        self.k
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn problem(&self) -> &'p Problem {
        self.problem
    }

    /// Validates the event against the assignment ledger and evaluates the
    /// stochastic gradient at the sender's model copy.
    pub fn gradient(&self, ev: &GradientEvent) -> Result<Vector> {
        let w = ev.worker;
        if w >= self.n() {
            return Err(SimError::Protocol(format!("event from unknown worker {w}")));
        }
        if ev.iterate_index != self.stamps[w] {
            return Err(SimError::Protocol(format!(
                "worker {w} sent a gradient at iterate {} but was assigned iterate {}",
                ev.iterate_index, self.stamps[w]
            )));
        }
        self.problem.stochastic_gradient(w, &self.models[w], ev.sample_seed)
    }

    pub fn log(&mut self, ev: &GradientEvent, disposition: Disposition, triggered_update: Option<u64>) {
        self.events.push(EventLogEntry {
            time: ev.time,
            worker: ev.worker,
            stamp: ev.iterate_index,
            sample_seed: ev.sample_seed,
            disposition,
            triggered_update,
        });
    }

    /// `xᵏ⁺¹ = xᵏ − γ·direction`; returns `‖∇f(xᵏ)‖²`.
    pub fn step(&mut self, direction: Vector) -> Result<f64> {
        let grad_norm_sq = self.problem.full_grad(&self.x).norm_squared();
        self.x.axpy(-self.gamma, &direction, 1.0);
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NumericDomain(format!("iterate {} is not finite (diverged)", self.k + 1)));
        }
        if let Some(xs) = &mut self.iterates {
            xs.push(self.x.clone());
        }
        if let Some(ds) = &mut self.directions {
            ds.push(direction);
        }
        self.k += 1;
        Ok(grad_norm_sq)
    }

    /// Hands the current iterate to worker `w`; returns whether in-flight work was lost.
    pub fn assign(&mut self, w: usize, timeline: &mut Timeline) -> bool {
        self.models[w].copy_from(&self.x);
        self.stamps[w] = self.k;
        timeline.reassign(w, self.k)
    }

    fn into_trace(self, trace: &mut RunTrace) {
        trace.events = self.events;
        trace.iterates = self.iterates;
        trace.directions = self.directions;
    }
}

/// Any of the concrete servers.
#[derive(Debug)]
enum AnyServer<'p> {
    Ringleader(RingleaderServer<'p>),
    Malenia(MaleniaServer<'p>),
    Ia2sgd(Ia2sgdServer<'p>),
    Minibatch(MinibatchServer<'p>),
}

impl Server for AnyServer<'_> {
    fn on_event(
        &mut self,
        event: &GradientEvent,
        timeline: &mut Timeline,
    ) -> Result<Option<crate::trace::IterationRecord>> {
        match self {
            AnyServer::Ringleader(s) => s.on_event(event, timeline),
            AnyServer::Malenia(s) => s.on_event(event, timeline),
            AnyServer::Ia2sgd(s) => s.on_event(event, timeline),
            AnyServer::Minibatch(s) => s.on_event(event, timeline),
        }
    }
}

impl<'p> AnyServer<'p> {
    fn into_core(self) -> ServerCore<'p> {
        match self {
            AnyServer::Ringleader(s) => s.into_core(),
            AnyServer::Malenia(s) => s.into_core(),
            AnyServer::Ia2sgd(s) => s.into_core(),
            AnyServer::Minibatch(s) => s.into_core(),
        }
    }
}

/// Runs `algorithm` on `problem` with one worker per profile.
pub fn simulate(
    problem: &Problem,
    profiles: Vec<WorkerProfile>,
    algorithm: &Algorithm,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let n = problem.n();
    if profiles.len() != n {
        return Err(SimError::config(format!("{} worker profiles for a problem with n={n}", profiles.len())));
    }
    let core = ServerCore::new(problem, opts.gamma, opts.audit)?;
    let mut server = match *algorithm {
        Algorithm::Ringleader | Algorithm::RingleaderUniversal { .. } => {
            let rule = algorithm.stopping_rule().expect("ringleader has a rule");
            rule.validate()?;
            AnyServer::Ringleader(RingleaderServer::new(core, rule))
        }
        Algorithm::Malenia { .. } | Algorithm::MaleniaParameterFree => {
            let rule = algorithm.stopping_rule().expect("malenia has a rule");
            rule.validate()?;
            AnyServer::Malenia(MaleniaServer::new(core, rule))
        }
        Algorithm::Ia2sgd => AnyServer::Ia2sgd(Ia2sgdServer::new(core)),
        Algorithm::Minibatch => AnyServer::Minibatch(MinibatchServer::new(core)),
    };
    let mut timeline = Timeline::new(profiles, opts.seed)?;
    let records = timeline.run(&mut server, &opts.stop)?;
    let mut trace = RunTrace {
        algorithm: algorithm.name().to_string(),
        n,
        gamma: opts.gamma,
        run_seed: opts.seed,
        records,
        end_time: timeline.now(),
        discarded_total: timeline.discarded_total(),
        ..Default::default()
    };
    server.into_core().into_trace(&mut trace);
    Ok(trace)
}
