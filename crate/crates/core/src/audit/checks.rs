use super::tsequence::{t_sequence, theorem3_index};
use super::{Finding, Status};
use crate::numeric::median;
use crate::timeline::WorkerProfile;
use crate::trace::{Disposition, RunTrace};

fn is_ringleader(trace: &RunTrace) -> bool {
    trace.algorithm.starts_with("ringleader")
}

/// Every delay is at most `2n − 2`; at each round start `k = cn` the delays
/// are pairwise distinct and lie in `{0, …, n−1}` (all zero at `k = 0`).
pub fn check_delay_bound(trace: &RunTrace) -> Vec<Finding> {
    const BOUND: &str = "delay-bound";
    const START: &str = "round-start-delays";
    if !is_ringleader(trace) {
        let why = format!("{} does not bound delays by round", trace.algorithm);
        return vec![Finding::not_applicable(BOUND, why.clone()), Finding::not_applicable(START, why)];
    }
    let n = trace.n as u64;
    let bound = 2 * n - 2;
    let mut out = Vec::new();
    let mut max_seen = 0;
    let mut violation = None;
    for r in &trace.records {
        for (i, &d) in r.delays.iter().enumerate() {
            max_seen = max_seen.max(d);
            if d > bound && violation.is_none() {
                violation = Some(format!("k={} worker={i} delay={d} > 2n-2={bound}", r.iteration));
            }
        }
    }
    out.push(match violation {
        Some(w) => Finding::fail(BOUND, w),
        None => Finding::pass(BOUND, format!("{} records, max delay {max_seen} <= {bound}", trace.records.len())),
    });

    let mut start_violation = None;
    let mut starts = 0;
    for r in trace.records.iter().filter(|r| r.iteration % n == 0) {
        starts += 1;
        let ok = if r.iteration == 0 {
            r.delays.iter().all(|&d| d == 0)
        } else {
            let mut seen = vec![false; trace.n];
            r.delays.iter().all(|&d| d < n && !std::mem::replace(&mut seen[d as usize], true))
        };
        if !ok {
            start_violation = Some(format!("k={} delays={:?}", r.iteration, r.delays));
            break;
        }
    }
    out.push(match start_violation {
        Some(w) => Finding::fail(START, w),
        None => Finding::pass(START, format!("{starts} round starts checked")),
    });
    out
}

/// Wall-clock span of one Ringleader round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSpan {
    pub round: u64,
    /// Time of the previous round's last update (0 for the first round).
    pub start: f64,
    /// Time of this round's last recorded update.
    pub end: f64,
    pub updates: u32,
    pub min_harmonic_batch: f64,
}

impl RoundSpan {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

pub fn round_spans(trace: &RunTrace) -> Vec<RoundSpan> {
    let mut spans: Vec<RoundSpan> = Vec::new();
    for r in &trace.records {
        match spans.last_mut() {
            Some(s) if s.round == r.round => {
                s.end = r.time;
                s.updates += 1;
                s.min_harmonic_batch = s.min_harmonic_batch.min(r.harmonic_batch);
            }
            last => {
                let start = last.map_or(0.0, |s| s.end);
                spans.push(RoundSpan {
                    round: r.round,
                    start,
                    end: r.time,
                    updates: 1,
                    min_harmonic_batch: r.harmonic_batch,
                });
            }
        }
    }
    spans
}

/// Under fixed compute times: every round lasts at most `2τₙ` and every
/// `Bᵏ ≥ max{1, τₙ/(2τ_avg)}`. `rel_slack` loosens both bounds
/// multiplicatively (0 for an exact check).
pub fn check_round_timing(trace: &RunTrace, taus: &[f64], rel_slack: f64) -> Vec<Finding> {
    const DURATION: &str = "round-duration";
    const BATCH: &str = "harmonic-batch-floor";
    if !is_ringleader(trace) {
        let why = format!("{} has no Ringleader rounds", trace.algorithm);
        return vec![Finding::not_applicable(DURATION, why.clone()), Finding::not_applicable(BATCH, why)];
    }
    if taus.len() != trace.n || taus.is_empty() {
        let why = "fixed compute times not available (universal model?)";
        return vec![Finding::not_applicable(DURATION, why), Finding::not_applicable(BATCH, why)];
    }
    let tau_n = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tau_avg = taus.iter().sum::<f64>() / taus.len() as f64;
    let max_duration = 2.0 * tau_n * (1.0 + rel_slack);
    let b_floor = (tau_n / (2.0 * tau_avg)).max(1.0) * (1.0 - rel_slack);

    let spans = round_spans(trace);
    let mut out = Vec::new();
    let worst = spans.iter().map(RoundSpan::duration).fold(0.0, f64::max);
    out.push(match spans.iter().find(|s| s.duration() > max_duration) {
        Some(s) => Finding::fail(
            DURATION,
            format!("round {} spans [{}, {}] = {} > 2*tau_n = {}", s.round, s.start, s.end, s.duration(), 2.0 * tau_n),
        ),
        None => Finding::pass(DURATION, format!("{} rounds, longest {worst} <= {}", spans.len(), 2.0 * tau_n)),
    });
    let inf_b = trace.inf_harmonic_batch();
    out.push(match trace.records.iter().find(|r| r.harmonic_batch < b_floor) {
        Some(r) => Finding::fail(
            BATCH,
            format!("k={} B={} < tau_n/(2 tau_avg)={}", r.iteration, r.harmonic_batch, tau_n / (2.0 * tau_avg)),
        ),
        None => Finding::pass(BATCH, format!("inf B = {inf_b} >= {}", tau_n / (2.0 * tau_avg))),
    });
    out
}

/// Mean over runs of `(1/K) Σ_{k<K} ‖∇f(xᵏ)‖²`, compared against `slack·ε`.
pub fn check_convergence(traces: &[RunTrace], epsilon: f64, k: usize, slack: f64) -> Finding {
    const NAME: &str = "convergence";
    if traces.is_empty() || k == 0 {
        return Finding::new(NAME, Status::Inconclusive, "no runs or empty horizon");
    }
    let mut means = Vec::with_capacity(traces.len());
    for t in traces {
        match t.running_mean_grad_norm_sq(k) {
            Some(m) => means.push(m),
            None => {
                return Finding::new(
                    NAME,
                    Status::Inconclusive,
                    format!("seed {} stopped after {} < K={k} updates", t.run_seed, t.records.len()),
                )
            }
        }
    }
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    let witness = format!(
        "{} runs, K={k}: mean {avg:.6e}, median {:.6e}, bound {:.6e}",
        means.len(),
        median(&means),
        slack * epsilon
    );
    if avg <= slack * epsilon {
        Finding::pass(NAME, witness)
    } else {
        Finding::fail(NAME, witness)
    }
}

/// IA²SGD delays are not bounded by `n`: some slot reaches a delay of at least
/// `Σᵢ ⌊τₙ/τᵢ⌋ − n`.
pub fn check_ia2sgd_delay_growth(trace: &RunTrace, taus: &[f64]) -> Finding {
    const NAME: &str = "ia2sgd-delay-growth";
    if trace.algorithm != "ia2sgd" {
        return Finding::not_applicable(NAME, format!("{} is not ia2sgd", trace.algorithm));
    }
    let tau_n = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let target: i64 = taus.iter().map(|t| (tau_n / t).floor() as i64).sum::<i64>() - taus.len() as i64;
    let observed = trace.records.iter().map(|r| r.max_delay()).max().unwrap_or(0);
    if trace.end_time < 3.0 * tau_n {
        return Finding::new(NAME, Status::Inconclusive, format!("run ended at {} < 3 tau_n", trace.end_time));
    }
    let witness = format!("max delay {observed}, expected at least {target}");
    if observed as i64 >= target {
        Finding::pass(NAME, witness)
    } else {
        Finding::fail(NAME, witness)
    }
}

/// Ringleader never wastes a gradient: every delivered event lands in the
/// main or the plus table. For Malenia the number of abandoned computations
/// is reported.
pub fn check_conservation(trace: &RunTrace) -> Finding {
    const NAME: &str = "conservation";
    let main = trace.count_disposition(Disposition::MainTable);
    let plus = trace.count_disposition(Disposition::PlusTable);
    let triggered = trace.events.iter().filter(|e| e.triggered_update.is_some()).count();
    if triggered != trace.records.len() {
        return Finding::fail(NAME, format!("{triggered} triggering events for {} records", trace.records.len()));
    }
    if is_ringleader(trace) {
        let witness = format!(
            "{main} main + {plus} plus of {} events, {} discarded",
            trace.events.len(),
            trace.discarded_total
        );
        if main + plus == trace.events.len() && trace.discarded_total == 0 {
            Finding::pass(NAME, witness)
        } else {
            Finding::fail(NAME, witness)
        }
    } else if trace.algorithm.starts_with("malenia") {
        Finding::new(NAME, Status::Flag, format!("{} in-flight computations discarded", trace.discarded_total))
    } else {
        Finding::not_applicable(NAME, format!("{} has no table conservation law", trace.algorithm))
    }
}

/// Universal-model bound: the `K`-th update happens no later than `T^{2⌈K/n⌉}`
/// of the recursion with threshold `max{1, σ²/(nε)}`, for every `K` in the trace.
pub fn check_time_recursion(trace: &RunTrace, profiles: &[WorkerProfile], sigma_sq: f64, epsilon: f64) -> Finding {
    const NAME: &str = "time-recursion";
    if !is_ringleader(trace) {
        return Finding::not_applicable(NAME, format!("{} is not Ringleader", trace.algorithm));
    }
    let n = trace.n;
    let k_max = trace.records.len();
    if k_max == 0 {
        return Finding::new(NAME, Status::Inconclusive, "no updates");
    }
    let ts = t_sequence(profiles, sigma_sq, epsilon, theorem3_index(k_max as u64, n) as usize);
    for (idx, r) in trace.records.iter().enumerate() {
        let k = idx as u64 + 1;
        let j = theorem3_index(k, n) as usize;
        match ts[j] {
            Some(t) if r.time <= t => {}
            Some(t) => return Finding::fail(NAME, format!("update {k} at {} > T^{j} = {t}", r.time)),
            None => return Finding::fail(NAME, format!("T^{j} is unreachable yet update {k} happened")),
        }
    }
    Finding::pass(NAME, format!("{k_max} updates checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{simulate, Algorithm, RunOptions};
    use crate::problems::make_quadratic;
    use crate::timeline::StopRule;
    use crate::trace::IterationRecord;

    fn run(alg: Algorithm, taus: &[f64], stop: StopRule) -> RunTrace {
        let p = make_quadratic(2, taus.len(), 1.0, 0.5, 3).unwrap();
        let opts = RunOptions::new(0.02, 1, stop).with_audit();
        simulate(&p, WorkerProfile::fixed_all(taus).unwrap(), &alg, &opts).unwrap()
    }

    #[test]
    fn three_workers_delay_at_most_four() {
        let t = run(Algorithm::Ringleader, &[1.0, 2.0, 7.0], StopRule::iterations(150));
        let f = check_delay_bound(&t);
        assert!(f.iter().all(Finding::is_pass), "{f:?}");
        assert!(t.records.iter().all(|r| r.max_delay() <= 4));
    }

    #[test]
    fn forged_delay_fails() {
        let mut t = run(Algorithm::Ringleader, &[1.0, 2.0], StopRule::iterations(10));
        t.records[5].delays[0] = 3;
        assert!(check_delay_bound(&t)[0].is_fail());
    }

    #[test]
    fn uneven_workers_round_batches() {
        let t = run(Algorithm::Ringleader, &[1.0, 1.0, 10.0], StopRule::iterations(9));
        assert_eq!(t.records[0].batches, vec![10, 10, 1]);
        assert_eq!(t.records[0].harmonic_batch, 2.5);
        let r1 = &t.records[3];
        assert_eq!(r1.round, 1);
        assert_eq!(r1.batches, vec![9, 9, 1]);
        assert!((r1.harmonic_batch - 27.0 / 11.0).abs() < 1e-12);
        let f = check_round_timing(&t, &[1.0, 1.0, 10.0], 0.0);
        assert!(f.iter().all(Finding::is_pass), "{f:?}");
        let spans = round_spans(&t);
        assert_eq!(spans[1].start, 11.0);
        assert_eq!(spans[1].end, 21.0);
    }

    #[test]
    fn equal_workers_round_every_tau() {
        let t = run(Algorithm::Ringleader, &[1.0, 1.0], StopRule::iterations(6));
        let spans = round_spans(&t);
        assert_eq!(spans.len(), 3);
        // tie order makes the rounds alternate between one and two periods
        let durations: Vec<f64> = spans.iter().map(RoundSpan::duration).collect();
        assert_eq!(durations, vec![2.0, 1.0, 2.0]);
        assert!(check_round_timing(&t, &[1.0, 1.0], 0.0).iter().all(Finding::is_pass));
    }

    #[test]
    fn single_worker_round_is_one_gradient() {
        let t = run(Algorithm::Ringleader, &[0.75], StopRule::iterations(5));
        assert!(round_spans(&t).iter().all(|s| s.duration() == 0.75));
        assert!(check_delay_bound(&t).iter().all(Finding::is_pass));
    }

    #[test]
    fn non_ringleader_is_not_applicable() {
        let t = run(Algorithm::Minibatch, &[1.0, 2.0], StopRule::iterations(3));
        assert!(check_delay_bound(&t).iter().all(|f| f.status == Status::NotApplicable));
        assert!(check_round_timing(&t, &[1.0, 2.0], 0.0).iter().all(|f| f.status == Status::NotApplicable));
    }

    #[test]
    fn conservation_per_algorithm() {
        let t = run(Algorithm::Ringleader, &[1.0, 3.0, 5.0], StopRule::iterations(30));
        assert!(check_conservation(&t).is_pass());
        let m = run(Algorithm::MaleniaParameterFree, &[2.0, 3.0], StopRule::iterations(5));
        let f = check_conservation(&m);
        assert_eq!(f.status, Status::Flag);
        assert!(m.discarded_total > 0);
    }

    #[test]
    fn ia2sgd_delay_grows_with_slowest() {
        let t = run(Algorithm::Ia2sgd, &[1.0, 16.0], StopRule::time_budget(100.0));
        assert!(check_ia2sgd_delay_growth(&t, &[1.0, 16.0]).is_pass());
    }

    #[test]
    fn convergence_is_inconclusive_when_short() {
        let t = run(Algorithm::Ringleader, &[1.0, 2.0], StopRule::iterations(3));
        assert_eq!(check_convergence(&[t], 1.0, 10, 1.0).status, Status::Inconclusive);
    }

    #[test]
    fn convergence_passes_loose_target() {
        let t = run(Algorithm::Ringleader, &[1.0, 2.0], StopRule::iterations(4));
        let g0 = t.records[0].grad_norm_sq;
        assert!(check_convergence(&[t], 10.0 * g0, 1, 1.0).is_pass());
    }

    #[test]
    fn spans_from_synthetic_records() {
        let rec = |k: u64, time: f64| IterationRecord {
            iteration: k,
            time,
            delays: vec![0, 0],
            batches: vec![1, 1],
            harmonic_batch: 1.0,
            grad_norm_sq: 1.0,
            round: k / 2,
            updates_this_round: (k % 2 + 1) as u32,
            discarded_events: 0,
            trigger: 0,
        };
        let trace = RunTrace {
            algorithm: "ringleader".into(),
            n: 2,
            records: vec![rec(0, 1.0), rec(1, 2.0), rec(2, 4.0), rec(3, 7.0)],
            ..Default::default()
        };
        let spans = round_spans(&trace);
        assert_eq!((spans[0].start, spans[0].end), (0.0, 2.0));
        assert_eq!((spans[1].start, spans[1].end), (2.0, 7.0));
        assert!(check_round_timing(&trace, &[1.0, 2.0], 0.0)[0].is_fail());
    }
}
