//! Independent verification of simulation traces.
//!
//! Every check returns [`Finding`]s rather than panicking, so the CLI can
//! serialize them one per line and pick an exit code. Checks that need
//! per-event data expect a trace produced with `RunOptions::audit` set.

mod adversarial;
mod checks;
mod complexity;
mod replay;
mod tsequence;
mod variance;

pub use adversarial::adversarial_roleswitch_profiles;
pub use checks::{
    check_conservation, check_convergence, check_delay_bound, check_ia2sgd_delay_growth, check_round_timing,
    check_time_recursion, round_spans, RoundSpan,
};
pub use complexity::{fit_time_complexity, ComplexityFit, ComplexityPoint};
pub use replay::replay_directions;
pub use tsequence::{t_sequence, theorem3_index};
pub use variance::{check_variance_surrogate, estimator_second_moment};

use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    /// Not enough data to decide (e.g. the run stopped before the horizon).
    Inconclusive,
    /// Worth a look but not a violation.
    Flag,
}

/// One audit result. `witness` is a human-readable counterexample or summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub check: String,
    pub status: Status,
    pub witness: String,
}

impl Finding {
    pub fn new(check: &str, status: Status, witness: impl Into<String>) -> Self {
        Finding { check: check.to_string(), status, witness: witness.into() }
    }

    pub fn pass(check: &str, witness: impl Into<String>) -> Self {
        Self::new(check, Status::Pass, witness)
    }

    pub fn fail(check: &str, witness: impl Into<String>) -> Self {
        Self::new(check, Status::Fail, witness)
    }

    pub fn not_applicable(check: &str, why: impl Into<String>) -> Self {
        Self::new(check, Status::NotApplicable, why)
    }

    pub fn is_pass(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn is_fail(&self) -> bool {
        self.status == Status::Fail
    }
}

/// An ordered collection of findings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub findings: Vec<Finding>,
}

impl AuditReport {
    pub fn push(&mut self, f: Finding) {
        self.findings.push(f);
    }

    pub fn extend(&mut self, fs: impl IntoIterator<Item = Finding>) {
        self.findings.extend(fs);
    }

    pub fn has_failures(&self) -> bool {
        self.findings.iter().any(Finding::is_fail)
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for f in &self.findings {
            serde_json::to_writer(&mut out, f)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
