use super::{GradientTable, ServerCore, StoppingRule};
use crate::error::Result;
use crate::timeline::{GradientEvent, Server, Timeline};
use crate::trace::{Disposition, IterationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Accumulating until the stopping rule holds; no updates.
    Collect,
    /// One update per worker still in `S`; others are buffered.
    Update,
}

/// Ringleader ASGD server.
///
/// With [`StoppingRule::AllWorkersOnce`] this is the fixed-time method; with
/// [`StoppingRule::MaleniaCondition`] the collection phase waits for the
/// harmonic-mean condition instead (the universal-model variant).
#[derive(Debug, Clone)]
pub struct RingleaderServer<'p> {
    core: ServerCore<'p>,
    rule: StoppingRule,
    main: GradientTable,
    plus: GradientTable,
    /// Membership of `S`: workers that still owe an update this round
    /// (Collect: workers with `bᵢ ≥ 1`).
    in_s: Vec<bool>,
    phase: Phase,
    round: u64,
    updates_in_round: u32,
}

impl<'p> RingleaderServer<'p> {
    pub fn new(core: ServerCore<'p>, rule: StoppingRule) -> Self {
        let (n, d) = (core.n(), core.dim());
        RingleaderServer {
            core,
            rule,
            main: GradientTable::new(n, d),
            plus: GradientTable::new(n, d),
            in_s: vec![false; n],
            phase: Phase::Collect,
            round: 0,
            updates_in_round: 0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn core(&self) -> &ServerCore<'p> {
        &self.core
    }

    pub fn main_table(&self) -> &GradientTable {
        &self.main
    }

    pub fn plus_table(&self) -> &GradientTable {
        &self.plus
    }

    pub fn in_s(&self, i: usize) -> bool {
        self.in_s[i]
    }

    pub fn into_core(self) -> ServerCore<'p> {
        self.core
    }

    fn update(&mut self, ev: &GradientEvent, timeline: &mut Timeline) -> Result<IterationRecord> {
        let k = self.core.iteration();
        let delays = self.main.delays(k)?;
        let batches = self.main.counts().to_vec();
        let harmonic_batch = self.main.harmonic_batch();
        let grad_norm_sq = self.core.step(self.main.direction()?)?;
        let discarded = self.core.assign(ev.worker, timeline);
        self.in_s[ev.worker] = false;
        self.updates_in_round += 1;
        Ok(IterationRecord {
            iteration: k,
            time: ev.time,
            delays,
            batches,
            harmonic_batch,
            grad_norm_sq,
            round: self.round,
            updates_this_round: self.updates_in_round,
            discarded_events: discarded as u64,
            trigger: ev.worker,
        })
    }

    fn end_round_if_done(&mut self) {
        if self.in_s.iter().any(|&s| s) {
            return;
        }
        std::mem::swap(&mut self.main, &mut self.plus);
        self.plus.clear();
        for (i, s) in self.in_s.iter_mut().enumerate() {
            *s = self.main.is_filled(i);
        }
        self.phase = Phase::Collect;
        self.round += 1;
        self.updates_in_round = 0;
    }
}

impl Server for RingleaderServer<'_> {
    fn on_event(&mut self, ev: &GradientEvent, timeline: &mut Timeline) -> Result<Option<IterationRecord>> {
        let g = self.core.gradient(ev)?;
        let w = ev.worker;
        match self.phase {
            Phase::Collect => {
                self.main.add(w, &g, ev.iterate_index)?;
                self.in_s[w] = true;
                if !self.rule.fires(self.main.counts()) {
                    self.core.log(ev, Disposition::MainTable, None);
                    return Ok(None);
                }
                self.phase = Phase::Update;
                self.plus.clear();
                let rec = self.update(ev, timeline)?;
                self.core.log(ev, Disposition::MainTable, Some(rec.iteration));
                self.end_round_if_done();
                Ok(Some(rec))
            }
            Phase::Update if self.in_s[w] => {
                self.main.add(w, &g, ev.iterate_index)?;
                let rec = self.update(ev, timeline)?;
                self.core.log(ev, Disposition::MainTable, Some(rec.iteration));
                self.end_round_if_done();
                Ok(Some(rec))
            }
            Phase::Update => {
                self.plus.add(w, &g, ev.iterate_index)?;
                self.core.log(ev, Disposition::PlusTable, None);
                Ok(None)
            }
        }
    }
}
