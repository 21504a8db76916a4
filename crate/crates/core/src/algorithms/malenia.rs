use super::{GradientTable, ServerCore, StoppingRule};
use crate::error::Result;
use crate::timeline::{GradientEvent, Server, Timeline};
use crate::trace::{Disposition, IterationRecord};

/// Malenia SGD: collect until the rule holds, make one update, restart every
/// worker at the new iterate. In-flight computations are abandoned.
#[derive(Debug, Clone)]
pub struct MaleniaServer<'p> {
    core: ServerCore<'p>,
    rule: StoppingRule,
    table: GradientTable,
}

impl<'p> MaleniaServer<'p> {
    pub fn new(core: ServerCore<'p>, rule: StoppingRule) -> Self {
        let table = GradientTable::new(core.n(), core.dim());
        MaleniaServer { core, rule, table }
    }

    pub fn into_core(self) -> ServerCore<'p> {
        self.core
    }
}

impl Server for MaleniaServer<'_> {
    fn on_event(&mut self, ev: &GradientEvent, timeline: &mut Timeline) -> Result<Option<IterationRecord>> {
        let g = self.core.gradient(ev)?;
        self.table.add(ev.worker, &g, ev.iterate_index)?;
        if !self.rule.fires(self.table.counts()) {
            self.core.log(ev, Disposition::Malenia, None);
            return Ok(None);
        }
        let k = self.core.iteration();
        let delays = self.table.delays(k)?;
        let batches = self.table.counts().to_vec();
        let harmonic_batch = self.table.harmonic_batch();
        let grad_norm_sq = self.core.step(self.table.direction()?)?;
        self.table.clear();
        let mut discarded = 0;
        for w in 0..self.core.n() {
            discarded += self.core.assign(w, timeline) as u64;
        }
        self.core.log(ev, Disposition::Malenia, Some(k));
        Ok(Some(IterationRecord {
            iteration: k,
            time: ev.time,
            delays,
            batches,
            harmonic_batch,
            grad_norm_sq,
            round: k,
            updates_this_round: 1,
            discarded_events: discarded,
            trigger: ev.worker,
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::algorithms::{simulate, Algorithm, RunOptions};
    use crate::problems::make_quadratic;
    use crate::timeline::{StopRule, WorkerProfile};

    #[test]
    fn parameter_free_round_discards_fast_worker_progress() {
        let p = make_quadratic(3, 2, 1.0, 0.0, 1).unwrap();
        let profiles = WorkerProfile::fixed_all(&[1.0, 3.0]).unwrap();
        let t = simulate(
            &p,
            profiles,
            &Algorithm::MaleniaParameterFree,
            &RunOptions::new(0.05, 0, StopRule::iterations(3)),
        )
        .unwrap();
        for (k, r) in t.records.iter().enumerate() {
            assert_eq!(r.time, 3.0 * (k + 1) as f64);
            assert_eq!(r.batches, vec![3, 1]);
            assert_eq!(r.delays, vec![0, 0]);
        }
        // worker 0 completes at 3 too; it is delivered before worker 1, so
        // nothing is in flight for it at the broadcast
        assert_eq!(t.discarded_total, 0);
    }

    #[test]
    fn broadcast_discards_partial_work() {
        let p = make_quadratic(2, 2, 1.0, 0.0, 1).unwrap();
        let profiles = WorkerProfile::fixed_all(&[2.0, 3.0]).unwrap();
        let t = simulate(
            &p,
            profiles,
            &Algorithm::MaleniaParameterFree,
            &RunOptions::new(0.05, 0, StopRule::iterations(2)),
        )
        .unwrap();
        assert_eq!(t.records[0].time, 3.0);
        assert_eq!(t.records[0].batches, vec![1, 1]);
        assert_eq!(t.records[0].discarded_events, 1);
        assert_eq!(t.records[1].time, 6.0);
    }

    #[test]
    fn condition_collects_enough_gradients() {
        let p = make_quadratic(2, 2, 1.0, 8.0, 1).unwrap();
        let profiles = WorkerProfile::fixed_all(&[1.0, 1.0]).unwrap();
        let alg = Algorithm::Malenia { sigma_sq: 8.0, epsilon: 1.0 };
        let t = simulate(&p, profiles, &alg, &RunOptions::new(0.05, 0, StopRule::iterations(2))).unwrap();
        assert_eq!(t.records[0].batches, vec![4, 4]);
        assert_eq!(t.records[0].time, 4.0);
        assert!(t.records.iter().all(|r| r.harmonic_batch >= 4.0));
    }
}
