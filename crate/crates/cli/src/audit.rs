use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use ringsim::audit::{
    check_conservation, check_delay_bound, check_ia2sgd_delay_growth, check_round_timing, check_time_recursion,
    replay_directions, Finding, Status,
};
use ringsim::trace::{read_trace_csv, TraceRow};
use ringsim::Algorithm;

use crate::experiment::{Experiment, Outcome, TraceMeta};
use crate::CliError;

/// Relative slack for the round timing bounds; compute times from the
/// generator are not exact binary fractions.
const TIMING_SLACK: f64 = 1e-9;

/// One line of `audit.jsonl`.
#[derive(Debug, Clone, Serialize)]
pub struct AuditLine {
    pub run: String,
    #[serde(flatten)]
    pub finding: Finding,
}

impl AuditLine {
    pub fn new(run: impl Into<String>, finding: Finding) -> Self {
        AuditLine { run: run.into(), finding }
    }

    pub fn is_fail(&self) -> bool {
        self.finding.is_fail()
    }
}

pub fn write_jsonl(path: &Path, lines: &[AuditLine]) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        serde_json::to_writer(&mut w, l).expect("finding serializes");
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Prints every failure to stderr; returns how many there were.
pub fn report_failures(lines: &[AuditLine]) -> usize {
    let fails: Vec<&AuditLine> = lines.iter().filter(|l| l.is_fail()).collect();
    for l in &fails {
        eprintln!("FAIL {} {}: {}", l.run, l.finding.check, l.finding.witness);
    }
    fails.len()
}

/// In-memory checks on a finished run.
pub fn audit_outcome(exp: &Experiment, out: &Outcome, replay: bool) -> Vec<Finding> {
    let t = &out.trace;
    let mut f = check_delay_bound(t);
    match &out.workers.taus {
        Some(taus) => {
            // the 2τₙ round bound assumes the one-gradient-per-worker threshold
            if out.algorithm == Algorithm::Ringleader {
                f.extend(check_round_timing(t, taus, TIMING_SLACK));
            }
            f.push(check_ia2sgd_delay_growth(t, taus));
        }
        None if out.algorithm.is_ringleader() => {
            let (s, e) = match out.algorithm {
                Algorithm::RingleaderUniversal { sigma_sq, epsilon } => (sigma_sq, epsilon),
                _ => (0.0, 1.0),
            };
            f.push(check_time_recursion(t, &out.workers.profiles, s, e));
        }
        None => {}
    }
    f.push(check_conservation(t));
    if replay {
        f.push(replay_directions(t, &exp.problem));
    }
    f.retain(|x| x.status != Status::NotApplicable);
    f
}

/// Every directory under `root` holding a `trace.csv`, sorted.
pub fn find_trace_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        if dir.join("trace.csv").is_file() {
            out.push(dir.to_path_buf());
        }
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(&p, out)?;
            }
        }
        Ok(())
    }
    if !root.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", root.display())));
    }
    let mut out = Vec::new();
    walk(root, &mut out)?;
    out.sort();
    Ok(out)
}

pub fn read_rows(dir: &Path) -> Result<Vec<TraceRow>, CliError> {
    let file = fs::File::open(dir.join("trace.csv"))?;
    read_trace_csv(std::io::BufReader::new(file)).map_err(CliError::from_sim)
}

fn verdict(check: &str, violation: Option<String>, ok: String) -> Finding {
    match violation {
        Some(w) => Finding::fail(check, w),
        None => Finding::pass(check, ok),
    }
}

/// Checks that need only the CSV columns and the sidecar metadata.
pub fn audit_rows(rows: &[TraceRow], meta: Option<&TraceMeta>) -> Vec<Finding> {
    let mut out = Vec::new();
    let first = |pred: &dyn Fn(usize, &TraceRow) -> Option<String>| rows.iter().enumerate().find_map(|(i, r)| pred(i, r));

    out.push(verdict(
        "iteration-sequence",
        first(&|i, r| (r.iteration != i as u64).then(|| format!("row {i} has iteration {}", r.iteration))),
        format!("{} rows numbered 0..{}", rows.len(), rows.len()),
    ));
    out.push(verdict(
        "time-monotone",
        rows.windows(2)
            .find(|w| !(w[1].virtual_time >= w[0].virtual_time))
            .map(|w| format!("k={} at t={} after t={}", w[1].iteration, w[1].virtual_time, w[0].virtual_time)),
        "virtual time never decreases".into(),
    ));
    out.push(verdict(
        "batch-at-least-one",
        first(&|_, r| (!(r.b_k >= 1.0) || !r.b_k.is_finite()).then(|| format!("k={} B_k={}", r.iteration, r.b_k))),
        "every B_k >= 1".into(),
    ));

    let Some(meta) = meta else { return out };
    if !meta.algorithm.starts_with("ringleader") {
        return out;
    }
    let n = meta.n as u64;
    let bound = 2 * n - 2;
    out.push(verdict(
        "delay-bound",
        first(&|_, r| (r.max_delay > bound).then(|| format!("k={} max_delay={} > 2n-2={bound}", r.iteration, r.max_delay))),
        format!("max delay <= {bound}"),
    ));
    out.push(verdict(
        "round-position",
        first(&|i, r| {
            let expect = (i as u64 % n + 1) as u32;
            (r.updates_this_round != expect)
                .then(|| format!("k={} updates_this_round={} expected {expect}", r.iteration, r.updates_this_round))
        }),
        format!("rounds of {n} updates"),
    ));
    out.push(verdict(
        "conservation",
        first(&|_, r| (r.discarded_events > 0).then(|| format!("k={} discarded {}", r.iteration, r.discarded_events))),
        "no discarded work".into(),
    ));
    if let (Some(tau_n), Some(tau_avg), "ringleader") = (meta.tau_n, meta.tau_avg, meta.algorithm.as_str()) {
        let max_duration = 2.0 * tau_n * (1.0 + TIMING_SLACK);
        let mut start = 0.0;
        let mut violation = None;
        for r in rows.iter().filter(|r| r.updates_this_round as u64 == n) {
            if r.virtual_time - start > max_duration {
                violation = Some(format!("round ending at k={} lasted {} > 2*tau_n = {}", r.iteration, r.virtual_time - start, 2.0 * tau_n));
                break;
            }
            start = r.virtual_time;
        }
        out.push(verdict("round-duration", violation, format!("rounds last <= {}", 2.0 * tau_n)));
        let floor = (tau_n / (2.0 * tau_avg)).max(1.0);
        out.push(verdict(
            "harmonic-batch-floor",
            first(&|_, r| (r.b_k < floor * (1.0 - TIMING_SLACK)).then(|| format!("k={} B_k={} < {floor}", r.iteration, r.b_k))),
            format!("every B_k >= {floor}"),
        ));
    }
    out
}

/// `audit <trace-dir>`: CSV-level checks on every trace below `root`.
pub fn audit_dir(root: &Path) -> Result<Vec<AuditLine>, CliError> {
    let dirs = find_trace_dirs(root)?;
    if dirs.is_empty() {
        return Err(CliError::Config(format!("no trace.csv below {}", root.display())));
    }
    let mut lines = Vec::new();
    for dir in dirs {
        let run = dir.strip_prefix(root).unwrap_or(&dir).display().to_string();
        let meta = match TraceMeta::read(&dir) {
            Ok(m) => Some(m),
            Err(e) => {
                eprintln!("notice: {e}; algorithm-specific checks skipped");
                None
            }
        };
        match read_rows(&dir) {
            Ok(rows) => lines.extend(audit_rows(&rows, meta.as_ref()).into_iter().map(|f| AuditLine::new(&run, f))),
            Err(e) => lines.push(AuditLine::new(&run, Finding::fail("csv-schema", e.to_string()))),
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(n: usize) -> TraceMeta {
        TraceMeta {
            algorithm: "ringleader".into(),
            n,
            seed: 0,
            gamma: 0.1,
            taus: Some(vec![1.0; n]),
            tau_avg: Some(1.0),
            tau_n: Some(1.0),
            theory: None,
            updates: 0,
            end_time: 0.0,
            discarded_total: 0,
        }
    }

    fn rows(n: u32, k: u64) -> Vec<TraceRow> {
        (0..k)
            .map(|i| TraceRow {
                iteration: i,
                virtual_time: (i / n as u64 + 1) as f64,
                grad_norm_sq: 1.0,
                b_k: 1.0,
                max_delay: if i >= n as u64 { 1 } else { 0 },
                updates_this_round: (i % n as u64) as u32 + 1,
                discarded_events: 0,
            })
            .collect()
    }

    #[test]
    fn clean_rows_pass() {
        let f = audit_rows(&rows(2, 6), Some(&meta(2)));
        assert!(f.iter().all(Finding::is_pass), "{f:?}");
        assert_eq!(f.len(), 8);
    }

    #[test]
    fn forged_delay_fails() {
        let mut r = rows(2, 6);
        r[4].max_delay = 3;
        let f = audit_rows(&r, Some(&meta(2)));
        let bad: Vec<_> = f.iter().filter(|x| x.is_fail()).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].check, "delay-bound");
        assert!(bad[0].witness.contains("k=4"));
    }

    #[test]
    fn slow_round_and_time_reversal_fail() {
        let mut r = rows(2, 6);
        r[5].virtual_time = 9.0;
        r[3].virtual_time = 0.5;
        let f = audit_rows(&r, Some(&meta(2)));
        let bad: Vec<&str> = f.iter().filter(|x| x.is_fail()).map(|x| x.check.as_str()).collect();
        assert_eq!(bad, vec!["time-monotone", "round-duration"]);
    }

    #[test]
    fn without_meta_only_generic_checks_run() {
        assert_eq!(audit_rows(&rows(2, 4), None).len(), 3);
    }
}
