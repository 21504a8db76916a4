//! Trace records shared by the engine, the algorithms and the audit layer,
//! plus the on-disk CSV trace format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::Vector;

/// One server update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Update index `k`; the update maps `xᵏ` to `xᵏ⁺¹`.
    pub iteration: u64,
    /// Virtual time at which the update fired.
    pub time: f64,
    /// Per-worker delays `δᵢᵏ` of the gradients used by this update.
    pub delays: Vec<u64>,
    /// Per-worker gradient counts `bᵢᵏ` used by this update.
    pub batches: Vec<u64>,
    /// Harmonic-mean batch size `Bᵏ`.
    pub harmonic_batch: f64,
    /// `‖∇f(xᵏ)‖²` on the full objective, at the iterate the update starts from.
    pub grad_norm_sq: f64,
    /// Round index (Ringleader: `k / n`; synchronous methods: `k`).
    pub round: u64,
    /// 1-based position of this update inside its round.
    pub updates_this_round: u32,
    /// In-flight computations abandoned by the broadcast that followed this update.
    pub discarded_events: u64,
    /// Worker whose gradient triggered the update.
    pub trigger: usize,
}

impl IterationRecord {
    pub fn max_delay(&self) -> u64 {
        self.delays.iter().copied().max().unwrap_or(0)
    }
}

/// What the server did with a delivered gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disposition {
    MainTable,
    PlusTable,
    Ia2sgdSlot,
    Minibatch,
    Malenia,
    Discarded,
}

impl Disposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Disposition::MainTable => "main-table",
            Disposition::PlusTable => "plus-table",
            Disposition::Ia2sgdSlot => "ia2sgd-slot",
            Disposition::Minibatch => "minibatch",
            Disposition::Malenia => "malenia",
            Disposition::Discarded => "discarded",
        }
    }
}

/// One delivered gradient event and how it was consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub time: f64,
    pub worker: usize,
    /// Iteration stamp of the model copy the gradient was computed at.
    pub stamp: u64,
    pub sample_seed: u64,
    pub disposition: Disposition,
    /// Index of the update this event triggered, if any.
    pub triggered_update: Option<u64>,
}

/// Everything a single simulation run produced.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub algorithm: String,
    pub n: usize,
    pub gamma: f64,
    pub run_seed: u64,
    pub records: Vec<IterationRecord>,
    pub events: Vec<EventLogEntry>,
    /// `x⁰, x¹, …` when the run was made in audit mode.
    pub iterates: Option<Vec<Vector>>,
    /// Update directions `ḡᵏ` when the run was made in audit mode.
    pub directions: Option<Vec<Vector>>,
    /// Virtual time at which the run stopped.
    pub end_time: f64,
    /// Total in-flight computations abandoned by broadcasts.
    pub discarded_total: u64,
}

impl RunTrace {
    /// Number of logged events with the given disposition.
    pub fn count_disposition(&self, d: Disposition) -> usize {
        self.events.iter().filter(|e| e.disposition == d).count()
    }

    /// Lowest observed `Bᵏ`.
    pub fn inf_harmonic_batch(&self) -> f64 {
        self.records.iter().map(|r| r.harmonic_batch).fold(f64::INFINITY, f64::min)
    }

    /// Virtual time of the first record with `‖∇f(xᵏ)‖² ≤ eps`.
    pub fn time_to_eps(&self, eps: f64) -> Option<f64> {
        self.records.iter().find(|r| r.grad_norm_sq <= eps).map(|r| r.time)
    }

    /// Mean of `‖∇f(xᵏ)‖²` over the first `k` records, `None` if fewer exist.
    pub fn running_mean_grad_norm_sq(&self, k: usize) -> Option<f64> {
        if k == 0 || self.records.len() < k {
            return None;
        }
        Some(self.records[..k].iter().map(|r| r.grad_norm_sq).sum::<f64>() / k as f64)
    }

    pub fn to_csv_rows(&self) -> Vec<TraceRow> {
        self.records.iter().map(TraceRow::from).collect()
    }
}

/// One row of the CSV trace. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub virtual_time: f64,
    pub grad_norm_sq: f64,
    #[serde(rename = "B_k")]
    pub b_k: f64,
    pub max_delay: u64,
    pub updates_this_round: u32,
    pub discarded_events: u64,
}

pub const TRACE_COLUMNS: [&str; 7] = [
    "iteration",
    "virtual_time",
    "grad_norm_sq",
    "B_k",
    "max_delay",
    "updates_this_round",
    "discarded_events",
];

impl From<&IterationRecord> for TraceRow {
    fn from(r: &IterationRecord) -> Self {
        TraceRow {
            iteration: r.iteration,
            virtual_time: r.time,
            grad_norm_sq: r.grad_norm_sq,
            b_k: r.harmonic_batch,
            max_delay: r.max_delay(),
            updates_this_round: r.updates_this_round,
            discarded_events: r.discarded_events,
        }
    }
}

fn csv_err(e: impl std::fmt::Display) -> SimError {
    SimError::Config(format!("trace csv: {e}"))
}

/// Writes the CSV trace (header plus one row per update).
pub fn write_trace_csv<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRACE_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.serialize(TraceRow::from(r)).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    Ok(())
}

/// Reads a CSV trace, rejecting files whose header differs from [`TRACE_COLUMNS`].
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(SimError::Config(format!(
            "trace csv: unexpected header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
