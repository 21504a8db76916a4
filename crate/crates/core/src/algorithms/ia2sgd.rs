use super::{GradientTable, ServerCore};
use crate::error::Result;
use crate::timeline::{GradientEvent, Server, Timeline};
use crate::trace::{Disposition, IterationRecord};

/// IA²SGD: keeps the latest gradient of every worker and steps with their
/// mean on every arrival, sending the new iterate to the sender only.
///
/// Slots are first filled at `x⁰`; until every worker has reported, arrivals
/// overwrite their slot and no update is made. The first update is broadcast
/// to all workers.
#[derive(Debug, Clone)]
pub struct Ia2sgdServer<'p> {
    core: ServerCore<'p>,
    slots: GradientTable,
    initialized: bool,
}

impl<'p> Ia2sgdServer<'p> {
    pub fn new(core: ServerCore<'p>) -> Self {
        let slots = GradientTable::new(core.n(), core.dim());
        Ia2sgdServer { core, slots, initialized: false }
    }

    pub fn into_core(self) -> ServerCore<'p> {
        self.core
    }
}

impl Server for Ia2sgdServer<'_> {
    fn on_event(&mut self, ev: &GradientEvent, timeline: &mut Timeline) -> Result<Option<IterationRecord>> {
        let g = self.core.gradient(ev)?;
        self.slots.overwrite(ev.worker, g, ev.iterate_index);
        if !self.initialized && !self.slots.all_filled() {
            self.core.log(ev, Disposition::Ia2sgdSlot, None);
            return Ok(None);
        }
        let k = self.core.iteration();
        let delays = self.slots.delays(k)?;
        let grad_norm_sq = self.core.step(self.slots.direction()?)?;
        let mut discarded = 0;
        if self.initialized {
            discarded += self.core.assign(ev.worker, timeline) as u64;
        } else {
            self.initialized = true;
            for w in 0..self.core.n() {
                discarded += self.core.assign(w, timeline) as u64;
            }
        }
        self.core.log(ev, Disposition::Ia2sgdSlot, Some(k));
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
