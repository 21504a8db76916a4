use super::{GradientTable, ServerCore};
use crate::error::Result;
use crate::timeline::{GradientEvent, Server, Timeline};
use crate::trace::{Disposition, IterationRecord};

/// Naive minibatch SGD: one gradient per worker at `xᵏ`, then one update.
/// Workers that have delivered idle until the round completes.
#[derive(Debug, Clone)]
pub struct MinibatchServer<'p> {
    core: ServerCore<'p>,
    slots: GradientTable,
}

impl<'p> MinibatchServer<'p> {
    pub fn new(core: ServerCore<'p>) -> Self {
        let slots = GradientTable::new(core.n(), core.dim());
        MinibatchServer { core, slots }
    }

    pub fn into_core(self) -> ServerCore<'p> {
        self.core
    }
}

impl Server for MinibatchServer<'_> {
    fn on_event(&mut self, ev: &GradientEvent, timeline: &mut Timeline) -> Result<Option<IterationRecord>> {
        let g = self.core.gradient(ev)?;
        self.slots.add(ev.worker, &g, ev.iterate_index)?;
        timeline.park(ev.worker);
        if !self.slots.all_filled() {
            self.core.log(ev, Disposition::Minibatch, None);
            return Ok(None);
        }
        let k = self.core.iteration();
        let delays = self.slots.delays(k)?;
        let grad_norm_sq = self.core.step(self.slots.direction()?)?;
        self.slots.clear();
        let mut discarded = 0;
        for w in 0..self.core.n() {
            discarded += self.core.assign(w, timeline) as u64;
        }
        self.core.log(ev, Disposition::Minibatch, Some(k));
        Ok(Some(IterationRecord {
            iteration: k,
            time: ev.time,
            delays,
            batches: vec![1; self.core.n()],
            harmonic_batch: 1.0,
            grad_norm_sq,
            round: k,
            updates_this_round: 1,
            discarded_events: discarded,
            trigger: ev.worker,
        }))
    }
}
