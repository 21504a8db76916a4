use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use ringsim::audit::Finding;
use ringsim::trace::TraceRow;

use crate::audit::{audit_outcome, write_jsonl, AuditLine};
use crate::config::StepsizeConfig;
use crate::curves::{time_grid, Band, CURVE_POINTS};
use crate::experiment::{Experiment, TraceMeta};
use crate::run::write_metadata;
use crate::CliError;

/// One (algorithm, γ) cell of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub algorithm: String,
    pub gamma: f64,
    pub seeds: usize,
    pub diverged: usize,
    /// Final value of the smoothed median curve; empty when any seed diverged.
    pub final_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestGamma {
    pub algorithm: String,
    pub gamma: Option<f64>,
    pub final_median: Option<f64>,
}

pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub best: Vec<BestGamma>,
    pub audit: Vec<AuditLine>,
}

impl SweepReport {
    /// Methods for which every stepsize diverged.
    pub fn all_diverged(&self) -> Vec<&str> {
        self.best.iter().filter(|b| b.gamma.is_none()).map(|b| b.algorithm.as_str()).collect()
    }
}

/// Diverged seed count and the traces of the seeds that finished.
type Cell = (usize, Vec<Vec<TraceRow>>);

pub fn gamma_dir(gamma: f64) -> String {
    format!("gamma-{gamma}")
}

/// Runs every algorithm × γ × seed within the time budget and ranks the
/// stepsizes by the final smoothed median of `‖∇f‖²` across seeds.
pub fn sweep(exp: &Experiment, out: &Path) -> Result<SweepReport, CliError> {
    let budget = exp
        .config
        .horizon
        .time_budget
        .ok_or_else(|| CliError::Config("sweep needs horizon.time_budget".into()))?;
    let (grid, window) = match &exp.config.stepsize {
        StepsizeConfig::Sweep { grid, window } => (grid.clone(), *window),
        StepsizeConfig::Fixed { gamma } => (vec![*gamma], 1),
        StepsizeConfig::Theory => return Err(CliError::Config("sweep needs a sweep or fixed stepsize policy".into())),
    };
    fs::create_dir_all(out)?;
    let mut jobs = Vec::new();
    for alg in &exp.config.algorithm {
        for &gamma in &grid {
            for &seed in &exp.config.seeds {
                jobs.push((alg.as_str(), gamma, seed));
            }
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(alg, gamma, seed)| {
            let rel = format!("{alg}/{}/seed-{seed}", gamma_dir(gamma));
            match exp.execute(alg, seed, Some(gamma), false, &out.join(&rel)) {
                Ok(o) if o.trace.records.iter().any(|r| !r.grad_norm_sq.is_finite()) => Ok((rel, None, Vec::new())),
                Ok(o) => {
                    let findings = audit_outcome(exp, &o, false);
                    let rows = o.trace.to_csv_rows();
                    Ok((rel, Some((o.meta, rows)), findings))
                }
                Err(CliError::Diverged(_)) => Ok((rel, None, Vec::new())),
                Err(e) => Err(e),
            }
        })
        .collect();

    let times = time_grid(budget, CURVE_POINTS);
    let mut cells: BTreeMap<(usize, usize), Cell> = BTreeMap::new();
    let mut audit = Vec::new();
    let mut metas: Vec<TraceMeta> = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        let (rel, done, findings) = r?;
        audit.extend(findings.into_iter().map(|f| AuditLine::new(&rel, f)));
        let a = exp.config.algorithm.iter().position(|x| x == job.0).expect("job algorithm is configured");
        let g = grid.iter().position(|&x| x == job.1).expect("job gamma is on the grid");
        let cell = cells.entry((a, g)).or_default();
        match done {
            Some((meta, rows)) => {
                metas.push(meta);
                cell.1.push(rows);
            }
            None => cell.0 += 1,
        }
    }

    let mut rows = Vec::new();
    let mut best = Vec::new();
    for (a, alg) in exp.config.algorithm.iter().enumerate() {
        let mut winner: Option<(f64, f64)> = None;
        for (g, &gamma) in grid.iter().enumerate() {
            let (diverged, runs) = cells.remove(&(a, g)).unwrap_or_default();
            let final_median = if diverged > 0 {
                None
            } else {
                let refs: Vec<&[TraceRow]> = runs.iter().map(Vec::as_slice).collect();
                Band::aggregate(&refs, &times).map(|b| *b.smoothed(window).median.last().expect("grid is non-empty"))
            };
            if let Some(v) = final_median.filter(|v| v.is_finite()) {
                if winner.is_none_or(|(_, w)| v < w) {
                    winner = Some((gamma, v));
                }
            }
            rows.push(SweepRow { algorithm: alg.clone(), gamma, seeds: exp.config.seeds.len(), diverged, final_median });
        }
        if winner.is_none() {
            audit.push(AuditLine::new(alg.as_str(), Finding::fail("sweep", "every stepsize diverged")));
        }
        best.push(BestGamma { algorithm: alg.clone(), gamma: winner.map(|w| w.0), final_median: winner.map(|w| w.1) });
    }

    write_table(&out.join("sweep.csv"), &rows)?;
    write_table(&out.join("best_gamma.csv"), &best)?;
    write_jsonl(&out.join("audit.jsonl"), &audit)?;
    write_metadata(exp, metas, out)?;
    Ok(SweepReport { rows, best, audit })
}

fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush()?;
    Ok(())
}
