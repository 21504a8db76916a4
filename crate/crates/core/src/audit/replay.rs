use super::Finding;
use crate::problems::Problem;
use crate::trace::{Disposition, RunTrace};
use crate::Vector;

const CHECK: &str = "direction-replay";
const REL_TOL: f64 = 1e-12;

#[derive(Clone)]
struct Entry {
    sum: Vector,
    count: u64,
    stamp: Option<u64>,
}

impl Entry {
    fn empty(d: usize) -> Self {
        Entry { sum: Vector::zeros(d), count: 0, stamp: None }
    }
}

struct Shadow {
    main: Vec<Entry>,
    plus: Vec<Entry>,
    d: usize,
}

impl Shadow {
    fn new(n: usize, d: usize) -> Self {
        Shadow { main: vec![Entry::empty(d); n], plus: vec![Entry::empty(d); n], d }
    }

    fn add(table: &mut [Entry], i: usize, g: &Vector, stamp: u64) -> Result<(), String> {
        let e = &mut table[i];
        if e.stamp.is_some_and(|s| s != stamp) {
            return Err(format!("entry {i} mixes iterates {} and {stamp}", e.stamp.unwrap()));
        }
        e.stamp = Some(stamp);
        e.sum += g;
        e.count += 1;
        Ok(())
    }

    fn direction(&self) -> Result<Vector, String> {
        let n = self.main.len();
        let mut dir = Vector::zeros(self.d);
        for (i, e) in self.main.iter().enumerate() {
            if e.count == 0 {
                return Err(format!("update with empty entry {i}"));
            }
            dir += &e.sum / e.count as f64;
        }
        Ok(dir / n as f64)
    }

    fn clear_main(&mut self) {
        self.main = vec![Entry::empty(self.d); self.main.len()];
    }
}

/// Rebuilds every update direction from the event log alone and compares it
/// with the recorded one.
///
/// Each gradient is recomputed at the logged iterate with the logged sample
/// seed, then routed through shadow tables that follow the algorithm's
/// protocol. Besides the directions, this checks that every event used the
/// iterate its worker was last handed and that the dispositions are the ones
/// the protocol allows. Needs a trace recorded with `RunOptions::audit`.
pub fn replay_directions(trace: &RunTrace, problem: &Problem) -> Finding {
    match replay(trace, problem) {
        Ok(updates) => Finding::pass(CHECK, format!("{updates} directions reproduced within {REL_TOL:e}")),
        Err(msg) => Finding::fail(CHECK, msg),
    }
}

fn replay(trace: &RunTrace, problem: &Problem) -> Result<usize, String> {
    let (Some(iterates), Some(directions)) = (&trace.iterates, &trace.directions) else {
        return Err("trace has no iterates; rerun with audit enabled".into());
    };
    let n = trace.n;
    if problem.n() != n {
        return Err(format!("problem has {} workers, trace has {n}", problem.n()));
    }
    let alg = trace.algorithm.as_str();
    let ringleader = alg.starts_with("ringleader");
    let mut shadow = Shadow::new(n, problem.dim());
    let mut assigned = vec![0u64; n];
    let mut updated_this_round = vec![false; n];
    let mut updates_in_round = 0;
    let mut ia2sgd_started = false;
    let mut k = 0usize;

    for (idx, ev) in trace.events.iter().enumerate() {
        let w = ev.worker;
        if w >= n {
            return Err(format!("event {idx} from unknown worker {w}"));
        }
        if ev.stamp != assigned[w] {
            return Err(format!("event {idx}: worker {w} used iterate {} but was handed {}", ev.stamp, assigned[w]));
        }
        let x = iterates.get(ev.stamp as usize).ok_or(format!("event {idx}: iterate {} missing", ev.stamp))?;
        let g = problem.stochastic_gradient(w, x, ev.sample_seed).map_err(|e| e.to_string())?;

        let expected = match (alg, ev.disposition) {
            (_, Disposition::MainTable) if ringleader => {
                if updated_this_round[w] {
                    return Err(format!("event {idx}: worker {w} already updated this round but went to the main table"));
                }
                Shadow::add(&mut shadow.main, w, &g, ev.stamp)?;
                true
            }
            (_, Disposition::PlusTable) if ringleader => {
                if !updated_this_round[w] {
                    return Err(format!("event {idx}: worker {w} went to the plus table before its update"));
                }
                Shadow::add(&mut shadow.plus, w, &g, ev.stamp)?;
                false
            }
            ("malenia" | "malenia-parameter-free", Disposition::Malenia) | ("minibatch", Disposition::Minibatch) => {
                Shadow::add(&mut shadow.main, w, &g, ev.stamp)?;
                true
            }
            ("ia2sgd", Disposition::Ia2sgdSlot) => {
                shadow.main[w] = Entry { sum: g, count: 1, stamp: Some(ev.stamp) };
                true
            }
            (a, d) => return Err(format!("event {idx}: disposition {} is not valid for {a}", d.as_str())),
        };

        let Some(upd) = ev.triggered_update else { continue };
        if !expected {
            return Err(format!("event {idx}: plus-table event triggered update {upd}"));
        }
        if upd as usize != k {
            return Err(format!("event {idx}: triggered update {upd}, expected {k}"));
        }
        let dir = shadow.direction().map_err(|e| format!("update {k}: {e}"))?;
        let recorded = directions.get(k).ok_or(format!("direction {k} missing"))?;
        let err = (&dir - recorded).norm();
        let scale = dir.norm().max(recorded.norm()).max(f64::MIN_POSITIVE);
        if err > REL_TOL * scale {
            return Err(format!("update {k}: replayed direction differs by {err:e} (norm {scale:e})"));
        }
        let next_x = &iterates[k] - trace.gamma * &dir;
        if let Some(x_next) = iterates.get(k + 1) {
            if (x_next - &next_x).norm() > REL_TOL * next_x.norm().max(1.0) {
                return Err(format!("update {k}: iterate {} is not x - gamma * direction", k + 1));
            }
        }
        k += 1;
        let stamp = k as u64;
        match alg {
            _ if ringleader => {
                assigned[w] = stamp;
                updated_this_round[w] = true;
                updates_in_round += 1;
                if updates_in_round == n {
                    shadow.main = std::mem::replace(&mut shadow.plus, vec![Entry::empty(shadow.d); n]);
                    updated_this_round.fill(false);
                    updates_in_round = 0;
                }
            }
            "ia2sgd" if ia2sgd_started => assigned[w] = stamp,
            "ia2sgd" => {
                ia2sgd_started = true;
                assigned.fill(stamp);
            }
            _ => {
                shadow.clear_main();
                assigned.fill(stamp);
            }
        }
    }
    if k != trace.records.len() || k != directions.len() {
        return Err(format!("replayed {k} updates; trace has {} records and {} directions", trace.records.len(), directions.len()));
    }
    Ok(k)
}
