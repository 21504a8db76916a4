use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use ringsim::audit::{check_convergence, Finding};
use ringsim::problems::ProblemSummary;
use ringsim::RunTrace;

use crate::audit::{audit_outcome, write_jsonl, AuditLine};
use crate::config::{RunConfig, StepsizeConfig};
use crate::experiment::{Experiment, TraceMeta};
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Metadata<'a> {
    pub config: &'a RunConfig,
    pub problem: ProblemSummary,
    /// `σ²` actually used by the formulas and stopping conditions.
    pub sigma_sq: f64,
    pub epsilon: Option<f64>,
    pub runs: Vec<TraceMeta>,
}

pub fn write_metadata(exp: &Experiment, runs: Vec<TraceMeta>, out: &Path) -> Result<(), CliError> {
    let meta = Metadata {
        config: &exp.config,
        problem: exp.problem.summary(),
        sigma_sq: exp.sigma_sq,
        epsilon: exp.config.epsilon,
        runs,
    };
    fs::write(out.join("metadata.json"), serde_json::to_string_pretty(&meta).expect("metadata serializes"))?;
    Ok(())
}

/// What `run` produced.
pub struct RunReport {
    pub runs: Vec<TraceMeta>,
    pub audit: Vec<AuditLine>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.audit.iter().filter(|l| l.is_fail()).count()
    }
}

pub fn run_label(alg: &str, seed: u64) -> String {
    format!("{alg}/seed-{seed}")
}

/// Every configured algorithm × seed with the configured stepsize. Traces go
/// to `out/<algorithm>/seed-<s>/`.
pub fn run(exp: &Experiment, out: &Path, replay: bool) -> Result<RunReport, CliError> {
    if matches!(exp.config.stepsize, StepsizeConfig::Sweep { .. }) {
        return Err(CliError::Config("stepsize policy is sweep; use the sweep subcommand".into()));
    }
    fs::create_dir_all(out)?;
    let jobs: Vec<(&str, u64)> =
        exp.config.algorithm.iter().flat_map(|a| exp.config.seeds.iter().map(move |&s| (a.as_str(), s))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(alg, seed)| {
            let label = run_label(alg, seed);
            match exp.execute(alg, seed, None, replay, &out.join(alg).join(format!("seed-{seed}"))) {
                Ok(o) => {
                    let findings = audit_outcome(exp, &o, replay);
                    Ok((label, Some((o.meta, o.trace)), findings))
                }
                Err(CliError::Diverged(msg)) => Ok((label, None, vec![Finding::fail("divergence", msg)])),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut runs = Vec::new();
    let mut audit = Vec::new();
    // theory horizons per algorithm, for the averaged-gradient check
    let mut by_horizon: BTreeMap<(String, u64), Vec<RunTrace>> = BTreeMap::new();
    let check_convergence_now = exp.config.stepsize == StepsizeConfig::Theory && exp.config.horizon.is_empty();
    for r in results {
        let (label, done, findings) = r?;
        audit.extend(findings.into_iter().map(|f| AuditLine::new(&label, f)));
        let Some((meta, trace)) = done else { continue };
        println!(
            "{label}: {} updates by t={}, gamma {}, last |grad f|^2 {}",
            meta.updates,
            meta.end_time,
            meta.gamma,
            trace.records.last().map_or(f64::NAN, |r| r.grad_norm_sq)
        );
        if check_convergence_now && meta.algorithm.starts_with("ringleader") {
            if let Some(t) = meta.theory {
                by_horizon.entry((meta.algorithm.clone(), t.iterations)).or_default().push(trace);
            }
        }
        runs.push(meta);
    }
    if let Some(eps) = exp.config.epsilon {
        for ((alg, k), traces) in &by_horizon {
            audit.push(AuditLine::new(alg.as_str(), check_convergence(traces, eps, *k as usize, 1.0)));
        }
    }
    write_jsonl(&out.join("audit.jsonl"), &audit)?;
    write_metadata(exp, runs.clone(), out)?;
    Ok(RunReport { runs, audit })
}
