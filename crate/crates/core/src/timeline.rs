//! Virtual-clock event engine.
//!
//! Each worker computes stochastic gradients back to back at the model copy
//! it was last handed. How long a gradient takes is governed by its
//! [`ComputeModel`]: either a fixed time `τ` per gradient, or a time-varying
//! compute power `p(t)` under which the number of gradients completed on
//! `[t₁, t₂]` is `⌊∫ p⌋`. The engine delivers completions in
//! `(time, worker_id)` order, so ties are broken by ascending worker id and
//! a run is a pure function of its profiles, seed and server.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::numeric::{sample_seed, snap_floor};
use crate::trace::IterationRecord;

/// Model-seconds on the simulator's logical clock.
pub type VirtualTime = f64;

/// One piece of a piecewise-constant power function: `rate` from `start`
/// until the next segment's start (the last segment is open-ended).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSegment {
    pub start: VirtualTime,
    pub rate: f64,
}

/// Piecewise-constant compute power `p(t)`, in gradients per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct PowerProfile {
    segments: Vec<PowerSegment>,
}

impl TryFrom<Vec<(f64, f64)>> for PowerProfile {
    type Error = SimError;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        PowerProfile::new(v)
    }
}

impl From<PowerProfile> for Vec<(f64, f64)> {
    fn from(p: PowerProfile) -> Self {
        p.segments.iter().map(|s| (s.start, s.rate)).collect()
    }
}

impl PowerProfile {
    /// Builds a profile from `(breakpoint, rate)` pairs. The first breakpoint
    /// must be 0, breakpoints strictly increasing, rates finite and non-negative.
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(SimError::config("power profile needs at least one segment"));
        }
        if segments[0].0 != 0.0 {
            return Err(SimError::config(format!(
                "power profile must start at t=0, first breakpoint is {}",
                segments[0].0
            )));
        }
        for w in segments.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(SimError::config(format!(
                    "power profile breakpoints must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(t, p) in &segments {
            if !t.is_finite() || !p.is_finite() || p < 0.0 {
                return Err(SimError::config(format!(
                    "invalid power segment ({t}, {p}): rates must be finite and non-negative"
                )));
            }
        }
        Ok(PowerProfile {
            segments: segments.into_iter().map(|(start, rate)| PowerSegment { start, rate }).collect(),
        })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(vec![(0.0, rate)])
    }

    pub fn segments(&self) -> &[PowerSegment] {
        &self.segments
    }

    fn segment_end(&self, idx: usize) -> f64 {
        self.segments.get(idx + 1).map_or(f64::INFINITY, |s| s.start)
    }

    fn segment_index(&self, t: f64) -> usize {
        self.segments.partition_point(|s| s.start <= t).saturating_sub(1)
    }

    pub fn rate_at(&self, t: VirtualTime) -> f64 {
        self.segments[self.segment_index(t)].rate
    }

    /// `∫_{t1}^{t2} p(t) dt`, summed exactly segment by segment.
    pub fn integral(&self, t1: VirtualTime, t2: VirtualTime) -> f64 {
        if t2 <= t1 {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut idx = self.segment_index(t1);
        let mut lo = t1;
        while lo < t2 && idx < self.segments.len() {
            let hi = self.segment_end(idx).min(t2);
            acc += self.segments[idx].rate * (hi - lo);
            lo = hi;
            idx += 1;
        }
        acc
    }

    /// Earliest `t ≥ from` with `∫_{from}^{t} p = units`, or `None` if the
    /// power stays zero before that much work is done.
    pub fn time_to_accumulate(&self, from: VirtualTime, units: f64) -> Option<VirtualTime> {
        if units <= 0.0 {
            return Some(from);
        }
        let mut acc = 0.0;
        let mut idx = self.segment_index(from);
        let mut lo = from;
        loop {
            let seg = self.segments[idx];
            let hi = self.segment_end(idx);
            if seg.rate > 0.0 {
                let gain = seg.rate * (hi - lo);
                if acc + gain >= units {
                    return Some(lo + (units - acc) / seg.rate);
                }
                acc += gain;
            }
            if hi.is_infinite() {
                return None;
            }
            lo = hi;
            idx += 1;
        }
    }
}

/// How a worker's gradient-completion times are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeModel {
    /// Exactly `tau` seconds per stochastic gradient.
    Fixed { tau: f64 },
    /// Time-varying compute power.
    Universal(PowerProfile),
}

impl ComputeModel {
    pub fn fixed(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(SimError::config(format!("compute time must be positive and finite, got {tau}")));
        }
        Ok(ComputeModel::Fixed { tau })
    }

    /// Units of gradient work done on `[t1, t2]`.
    pub fn work(&self, t1: VirtualTime, t2: VirtualTime) -> f64 {
        match self {
            ComputeModel::Fixed { tau } => (t2 - t1).max(0.0) / tau,
            ComputeModel::Universal(p) => p.integral(t1, t2),
        }
    }

    /// Time at which `units` of work started at `from` is finished.
    pub fn time_for_units(&self, from: VirtualTime, units: u64) -> Completion {
        match self {
            ComputeModel::Fixed { tau } => Completion::At(from + units as f64 * tau),
            ComputeModel::Universal(p) => {
                p.time_to_accumulate(from, units as f64).map_or(Completion::Never, Completion::At)
            }
        }
    }

    /// The fixed `τ`, if this is a fixed-time model.
    pub fn tau(&self) -> Option<f64> {
        match self {
            ComputeModel::Fixed { tau } => Some(*tau),
            ComputeModel::Universal(_) => None,
        }
    }
}

/// Outcome of asking when the next gradient will be ready.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Completion {
    At(VirtualTime),
    /// The worker is stalled for good (power identically zero from here on).
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub worker_id: usize,
    pub model: ComputeModel,
}

impl WorkerProfile {
    pub fn new(worker_id: usize, model: ComputeModel) -> Self {
        WorkerProfile { worker_id, model }
    }

    /// Fixed-time profiles for workers `0..taus.len()`.
    pub fn fixed_all(taus: &[f64]) -> Result<Vec<WorkerProfile>> {
        taus.iter()
            .enumerate()
            .map(|(i, &t)| ComputeModel::fixed(t).map(|m| WorkerProfile::new(i, m)))
            .collect()
    }

    pub fn universal_all(powers: Vec<PowerProfile>) -> Vec<WorkerProfile> {
        powers
            .into_iter()
            .enumerate()
            .map(|(i, p)| WorkerProfile::new(i, ComputeModel::Universal(p)))
            .collect()
    }
}

/// `⌊∫_{t1}^{t2} p⌋`: the number of gradients the worker completes on `[t1, t2]`.
pub fn completion_count(profile: &WorkerProfile, t1: VirtualTime, t2: VirtualTime) -> Result<u64> {
    if !(t1 <= t2) {
        return Err(SimError::config(format!("completion_count needs t1 <= t2, got [{t1}, {t2}]")));
    }
    Ok(snap_floor(profile.model.work(t1, t2)) as u64)
}

/// Per-worker engine state.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    /// Iteration stamp of the model copy the worker holds.
    pub stamp: u64,
    /// When the worker received its current model copy.
    pub work_started_at: VirtualTime,
    /// Gradients finished since `work_started_at`.
    pub completed: u64,
    /// Time of the last completion or assignment.
    pub last_mark: VirtualTime,
    /// Parked workers idle until they are handed a new model.
    pub parked: bool,
    /// Stochastic samples drawn so far (keys the sample stream).
    pub draws: u64,
}

impl WorkerState {
    fn fresh(stamp: u64, now: VirtualTime) -> Self {
        WorkerState { stamp, work_started_at: now, completed: 0, last_mark: now, parked: false, draws: 0 }
    }

    /// Fraction of the current gradient already computed at `now`.
    pub fn work_accumulated(&self, model: &ComputeModel, now: VirtualTime) -> f64 {
        if self.parked {
            return 0.0;
        }
        let w = model.work(self.work_started_at, now) - self.completed as f64;
        w.clamp(0.0, 1.0)
    }
}

/// Earliest time the worker finishes its in-progress gradient.
pub fn next_completion(profile: &WorkerProfile, state: &WorkerState) -> Completion {
    profile.model.time_for_units(state.work_started_at, state.completed + 1)
}

/// A finished stochastic gradient, as seen by the server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientEvent {
    pub time: VirtualTime,
    pub worker: usize,
    /// Iteration stamp of the model copy the gradient was computed at.
    pub iterate_index: u64,
    /// Seed of the i.i.d. sample `ξ` drawn for this gradient.
    pub sample_seed: u64,
}

/// When the event loop stops. Any criterion that is set can fire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_events: Option<u64>,
    pub max_iterations: Option<u64>,
    /// Events after this virtual time are not delivered.
    pub time_budget: Option<VirtualTime>,
    /// Stop once an update records `‖∇f(xᵏ)‖² ≤ target`.
    pub target_grad_norm_sq: Option<f64>,
}

impl StopRule {
    pub fn events(n: u64) -> Self {
        StopRule { max_events: Some(n), ..Default::default() }
    }

    pub fn iterations(k: u64) -> Self {
        StopRule { max_iterations: Some(k), ..Default::default() }
    }

    pub fn time_budget(t: VirtualTime) -> Self {
        StopRule { time_budget: Some(t), ..Default::default() }
    }

    fn is_unbounded(&self) -> bool {
        self.max_events.is_none()
            && self.max_iterations.is_none()
            && self.time_budget.is_none()
            && self.target_grad_norm_sq.is_none()
    }
}

/// Server side of the event loop: consumes one gradient completion and may
/// reassign or park workers through the [`Timeline`].
pub trait Server {
    fn on_event(&mut self, event: &GradientEvent, timeline: &mut Timeline) -> Result<Option<IterationRecord>>;
}

/// The event engine.
#[derive(Debug, Clone)]
pub struct Timeline {
    profiles: Vec<WorkerProfile>,
    workers: Vec<WorkerState>,
    queue: BinaryHeap<Reverse<(OrderedFloat<f64>, usize, u64)>>,
    generation: Vec<u64>,
    now: VirtualTime,
    run_seed: u64,
    delivered: u64,
    discarded: u64,
}

impl Timeline {
    /// All workers start computing at `x⁰` (stamp 0) at time 0.
    pub fn new(profiles: Vec<WorkerProfile>, run_seed: u64) -> Result<Self> {
        if profiles.is_empty() {
            return Err(SimError::config("need at least one worker"));
        }
        for (i, p) in profiles.iter().enumerate() {
            if p.worker_id != i {
                return Err(SimError::config(format!(
                    "worker profiles must be listed by id: position {i} holds worker {}",
                    p.worker_id
                )));
            }
            if let ComputeModel::Fixed { tau } = p.model {
                ComputeModel::fixed(tau)?;
            }
        }
        let n = profiles.len();
        let mut tl = Timeline {
            profiles,
            workers: vec![WorkerState::fresh(0, 0.0); n],
            queue: BinaryHeap::with_capacity(n),
            generation: vec![0; n],
            now: 0.0,
            run_seed,
            delivered: 0,
            discarded: 0,
        };
        for w in 0..n {
            tl.schedule(w);
        }
        Ok(tl)
    }

    fn schedule(&mut self, w: usize) {
        if let Completion::At(t) = next_completion(&self.profiles[w], &self.workers[w]) {
            self.queue.push(Reverse((OrderedFloat(t), w, self.generation[w])));
        }
    }

    fn drop_stale(&mut self) {
        while let Some(Reverse((_, w, g))) = self.queue.peek() {
            if *g == self.generation[*w] {
                break;
            }
            self.queue.pop();
        }
    }

    pub fn n(&self) -> usize {
        self.profiles.len()
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn profiles(&self) -> &[WorkerProfile] {
        &self.profiles
    }

    pub fn worker(&self, w: usize) -> &WorkerState {
        &self.workers[w]
    }

    pub fn events_delivered(&self) -> u64 {
        self.delivered
    }

    pub fn discarded_total(&self) -> u64 {
        self.discarded
    }

    /// Time of the next completion, if any worker can still complete one.
    pub fn peek_time(&mut self) -> Option<VirtualTime> {
        self.drop_stale();
        self.queue.peek().map(|Reverse((t, _, _))| t.0)
    }

    /// Delivers the next completion. The worker immediately starts its next
    /// gradient at the same model copy unless the server reassigns or parks it.
    pub fn next_event(&mut self) -> Result<GradientEvent> {
        self.drop_stale();
        let Some(Reverse((t, w, _))) = self.queue.pop() else {
            return Err(SimError::Deadlock { time: self.now });
        };
        let t = t.0;
        debug_assert!(t >= self.now, "virtual time went backwards");
        self.now = t;
        let st = &mut self.workers[w];
        let seed = sample_seed(self.run_seed, w, st.draws);
        st.draws += 1;
        st.completed += 1;
        st.last_mark = t;
        let ev = GradientEvent { time: t, worker: w, iterate_index: st.stamp, sample_seed: seed };
        self.delivered += 1;
        self.schedule(w);
        Ok(ev)
    }

    /// Hands worker `w` the model with iteration stamp `stamp` at the current
    /// time. Partial progress on its current gradient is abandoned; returns
    /// whether any work was thrown away.
    pub fn reassign(&mut self, w: usize, stamp: u64) -> bool {
        let now = self.now;
        let st = &self.workers[w];
        let discarded = !st.parked && self.profiles[w].model.work(st.last_mark, now) > 0.0;
        if discarded {
            self.discarded += 1;
        }
        let draws = st.draws;
        self.workers[w] = WorkerState { draws, ..WorkerState::fresh(stamp, now) };
        self.generation[w] += 1;
        self.schedule(w);
        discarded
    }

    /// Stops worker `w` until its next [`reassign`](Self::reassign).
    pub fn park(&mut self, w: usize) {
        self.workers[w].parked = true;
        self.generation[w] += 1;
    }

    /// Drives `server` until `stop` fires and returns the records it produced.
    pub fn run<S: Server + ?Sized>(&mut self, server: &mut S, stop: &StopRule) -> Result<Vec<IterationRecord>> {
        if stop.is_unbounded() {
            return Err(SimError::config("stop rule has no criterion set"));
        }
        let mut records = Vec::new();
        let mut events = 0u64;
        loop {
            if stop.max_events.is_some_and(|m| events >= m)
                || stop.max_iterations.is_some_and(|m| records.len() as u64 >= m)
            {
                break;
            }
            if let Some(budget) = stop.time_budget {
                match self.peek_time() {
                    Some(t) if t > budget => break,
                    None => return Err(SimError::Deadlock { time: self.now }),
                    _ => {}
                }
            }
            let ev = self.next_event()?;
            events += 1;
            if let Some(rec) = server.on_event(&ev, self)? {
                let hit = stop.target_grad_norm_sq.is_some_and(|eps| rec.grad_norm_sq <= eps);
                records.push(rec);
                if hit {
                    break;
                }
            }
        }
        Ok(records)
    }
}

/// Runs `server` against fresh workers with the given profiles.
pub fn run_event_loop<S: Server + ?Sized>(
    profiles: Vec<WorkerProfile>,
    run_seed: u64,
    server: &mut S,
    stop: &StopRule,
) -> Result<Vec<IterationRecord>> {
    Timeline::new(profiles, run_seed)?.run(server, stop)
}
