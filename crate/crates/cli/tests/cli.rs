use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ringsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ringsim"))
        .args(args)
        .env_remove("RINGSIM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_in(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ringsim(&args)
}

fn all_traces(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(d: &Path, root: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else if p.file_name().unwrap() == "trace.csv" {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

const MINIMAL: &str = r#"
algorithm = "ringleader"
seeds = [0]
[problem]
kind = "quadratic"
d = 2
[workers]
n = 1
taus = [1.0]
[stepsize]
policy = "fixed"
gamma = 0.1
[horizon]
iterations = 10
"#;

const THREE_WORKERS: &str = r#"
algorithm = ["ringleader", "ia2sgd", "malenia-parameter-free"]
seeds = [0, 1, 2]
sigma_sq = 0.5
[problem]
kind = "quadratic"
d = 3
seed = 4
[workers]
n = 3
taus = [1.0, 2.5, 6.0]
[stepsize]
policy = "fixed"
gamma = 0.05
[horizon]
time_budget = 80.0
"#;

#[test]
fn minimal_run_writes_trace_metadata_and_audit() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let out = tmp.path().join("out");
    let o = run_in(&cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let traces = all_traces(&out);
    assert_eq!(traces.len(), 1);
    let csv = String::from_utf8(traces[0].1.clone()).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,virtual_time,grad_norm_sq,B_k,max_delay,updates_this_round,discarded_events");
    assert_eq!(lines.len(), 11);

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    let c = &meta["problem"]["constants"];
    for key in ["l_f", "l_bound", "l_max"] {
        assert!(c[key].as_f64().unwrap() > 0.0, "{key}");
    }
    assert!(meta["problem"]["delta"].as_f64().is_some());
    assert_eq!(meta["runs"][0]["tau_avg"], 1.0);
    assert_eq!(meta["runs"][0]["tau_n"], 1.0);
    assert_eq!(meta["runs"][0]["gamma"], 0.1);
    assert_eq!(meta["config"]["horizon"]["iterations"], 10);

    let audit = fs::read_to_string(out.join("audit.jsonl")).unwrap();
    assert!(audit.lines().count() >= 3);
    assert!(!audit.contains("\"fail\""));
}

#[test]
fn forged_trace_fails_audit_with_witness() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "three.toml", THREE_WORKERS);
    let out = tmp.path().join("out");
    assert_eq!(code(&run_in(&cfg, &out, &[])), 0);

    let clean = ringsim(&["audit", out.to_str().unwrap()]);
    assert_eq!(code(&clean), 0, "{}", stderr(&clean));
    assert!(out.join("csv-audit.jsonl").is_file());

    // a delay of 2n-1 cannot happen under Ringleader
    let path = out.join("ringleader/seed-1/trace.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[7].split(',').map(String::from).collect();
    cols[4] = "5".into();
    lines[7] = cols.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let forged = ringsim(&["audit", out.to_str().unwrap()]);
    assert_eq!(code(&forged), 2);
    let err = stderr(&forged);
    assert!(err.contains("ringleader/seed-1 delay-bound: k=6 max_delay=5 > 2n-2=4"), "{err}");
}

#[test]
fn malformed_trace_header_fails_audit() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("x");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("trace.csv"), "iteration,time\n0,1\n").unwrap();
    let o = ringsim(&["audit", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("csv-schema"));
}

#[test]
fn replay_mode_reproduces_every_direction() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "three.toml", THREE_WORKERS);
    let out = tmp.path().join("out");
    let o = run_in(&cfg, &out, &["--replay", "--seeds", "5,6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let audit = fs::read_to_string(out.join("audit.jsonl")).unwrap();
    let replays: Vec<&str> = audit.lines().filter(|l| l.contains("direction-replay")).collect();
    assert_eq!(replays.len(), 6);
    assert!(replays.iter().all(|l| l.contains("\"pass\"")));
    assert!(out.join("ia2sgd/seed-6/trace.csv").is_file());
}

#[test]
fn same_config_gives_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "three.toml", THREE_WORKERS);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&run_in(&cfg, &a, &["--jobs", "1"])), 0);
    assert_eq!(code(&run_in(&cfg, &b, &["--jobs", "4"])), 0);
    let (ta, tb) = (all_traces(&a), all_traces(&b));
    assert_eq!(ta.len(), 9);
    assert_eq!(ta, tb);
}

#[test]
fn out_dir_defaults_to_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_ringsim"))
        .args(["run", cfg.to_str().unwrap()])
        .env("RINGSIM_OUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("ringleader/seed-0/trace.csv").is_file());
}

#[test]
fn sweep_writes_one_row_per_method_and_gamma() {
    let tmp = TempDir::new().unwrap();
    let text = THREE_WORKERS
        .replace("policy = \"fixed\"\ngamma = 0.05", "policy = \"sweep\"\ngrid = [0.01, 0.05, 0.2, 0.5]\nwindow = 3")
        .replace("seeds = [0, 1, 2]", "seeds = [0, 1, 2, 3, 4]");
    let cfg = write_config(tmp.path(), "sweep.toml", &text);
    let out = tmp.path().join("out");
    let o = ringsim(&["sweep", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(table.lines().next().unwrap(), "algorithm,gamma,seeds,diverged,final_median");
    assert_eq!(rows.len(), 12);
    assert_eq!(all_traces(&out).len(), 3 * 4 * 5);

    let best = fs::read_to_string(out.join("best_gamma.csv")).unwrap();
    assert_eq!(best.lines().count(), 4);
    for line in best.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let winner: f64 = cols[2].parse().unwrap();
        // the winner is the smallest final value among that method's rows
        let own = rows.iter().filter(|r| r.starts_with(&format!("{},", cols[0])));
        for r in own {
            if let Ok(v) = r.rsplit(',').next().unwrap().parse::<f64>() {
                assert!(winner <= v);
            }
        }
    }

    let again = tmp.path().join("again");
    assert_eq!(code(&ringsim(&["sweep", cfg.to_str().unwrap(), "--out-dir", again.to_str().unwrap()])), 0);
    assert_eq!(fs::read(out.join("sweep.csv")).unwrap(), fs::read(again.join("sweep.csv")).unwrap());
}

#[test]
fn single_gamma_sweep_matches_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "three.toml", THREE_WORKERS);
    let run_out = tmp.path().join("run");
    let sweep_out = tmp.path().join("sweep");
    assert_eq!(code(&run_in(&cfg, &run_out, &[])), 0);
    let o = ringsim(&["sweep", cfg.to_str().unwrap(), "--out-dir", sweep_out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for alg in ["ringleader", "ia2sgd", "malenia-parameter-free"] {
        for seed in 0..3 {
            let a = fs::read(run_out.join(format!("{alg}/seed-{seed}/trace.csv"))).unwrap();
            let b = fs::read(sweep_out.join(format!("{alg}/gamma-0.05/seed-{seed}/trace.csv"))).unwrap();
            assert_eq!(a, b, "{alg} seed {seed}");
        }
    }
}

#[test]
fn every_stepsize_diverging_exits_two() {
    let tmp = TempDir::new().unwrap();
    let text = THREE_WORKERS.replace("policy = \"fixed\"\ngamma = 0.05", "policy = \"sweep\"\ngrid = [50.0, 500.0]")
        .replace("time_budget = 80.0", "time_budget = 4000.0");
    let cfg = write_config(tmp.path(), "div.toml", &text);
    let out = tmp.path().join("out");
    let o = ringsim(&["sweep", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("every stepsize diverged"));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(table.lines().skip(1).all(|l| l.ends_with(",3,")), "{table}");
}

#[test]
fn theory_stepsize_sits_below_a_converging_grid_point() {
    let tmp = TempDir::new().unwrap();
    let text = THREE_WORKERS
        .replace("algorithm = [\"ringleader\", \"ia2sgd\", \"malenia-parameter-free\"]", "algorithm = \"ringleader\"")
        .replace("sigma_sq = 0.5", "sigma_sq = 0.5\nepsilon = 0.05")
        .replace("time_budget = 80.0", "time_budget = 1500.0");
    let theory = text.replace("policy = \"fixed\"\ngamma = 0.05", "policy = \"theory\"");
    let cfg = write_config(tmp.path(), "theory.toml", &theory);
    let out = tmp.path().join("theory");
    let o = run_in(&cfg, &out, &["--seeds", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();

    // γ = min{1/(8nL), εB/(10Lσ²)} with B = max{1, τₙ/(2τ_avg)} = 6/(2·19/6)
    let l = meta["problem"]["constants"]["l_bound"].as_f64().unwrap();
    let b = (6.0f64 / (2.0 * 9.5 / 3.0)).max(1.0);
    let expect = (1.0 / (24.0 * l)).min(0.05 * b / (10.0 * l * 0.5));
    let gamma = meta["runs"][0]["gamma"].as_f64().unwrap();
    assert!((gamma - expect).abs() <= 1e-12 * expect, "{gamma} vs {expect}");

    let grid = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0];
    let above = grid.iter().copied().find(|g| *g >= gamma).unwrap();
    let sweep = text.replace("policy = \"fixed\"\ngamma = 0.05", &format!("policy = \"sweep\"\ngrid = [{above}]"));
    let cfg = write_config(tmp.path(), "sweep.toml", &sweep);
    let sout = tmp.path().join("sweep");
    assert_eq!(code(&ringsim(&["sweep", cfg.to_str().unwrap(), "--out-dir", sout.to_str().unwrap()])), 0);
    let row = fs::read_to_string(sout.join("sweep.csv")).unwrap().lines().nth(1).unwrap().to_string();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[3], "0");
    let g0 = meta["problem"]["grad_norm_sq_x0"].as_f64().unwrap();
    assert!(cols[4].parse::<f64>().unwrap() < 0.1 * g0, "{row}");
}

#[test]
fn paper_generator_draws_per_seed() {
    let tmp = TempDir::new().unwrap();
    let text = THREE_WORKERS.replace("taus = [1.0, 2.5, 6.0]", "generator = \"paper\"");
    let cfg = write_config(tmp.path(), "gen.toml", &text);
    let out = tmp.path().join("out");
    let o = run_in(&cfg, &out, &["--seeds", "0..2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    let runs = meta["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 6);
    let taus = |r: &serde_json::Value| -> Vec<f64> {
        r["taus"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
    };
    for r in runs {
        for (i, t) in taus(r).iter().enumerate() {
            assert!(*t >= (i + 1) as f64);
        }
    }
    // the same seed gives the same speeds to every algorithm
    let by_seed = |s: u64| runs.iter().filter(move |r| r["seed"] == s).map(taus).collect::<Vec<_>>();
    let (s0, s1) = (by_seed(0), by_seed(1));
    assert!(s0.windows(2).all(|w| w[0] == w[1]));
    assert_ne!(s0[0], s1[0]);
}

#[test]
fn config_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.toml");
    assert_eq!(code(&ringsim(&["run", missing.to_str().unwrap()])), 1);

    let cases = [
        MINIMAL.replace("seeds = [0]", "seeds = []"),
        MINIMAL.replace("n = 1", "n = 0"),
        MINIMAL.replace("gamma = 0.1", "gamma = 0.1\ngrid = [1.0]"),
        MINIMAL.replace("d = 2", "d = 2\ncolour = \"red\""),
        MINIMAL.replace("[horizon]\niterations = 10", ""),
        "not toml at all [".to_string(),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.toml"), text);
        let o = ringsim(&["run", cfg.to_str().unwrap(), "--out-dir", tmp.path().join("o").to_str().unwrap()]);
        assert_eq!(code(&o), 1, "case {i}: {}", stderr(&o));
        assert!(stderr(&o).contains("configuration error"), "case {i}");
    }

    // sweeps need a time budget
    let cfg = write_config(tmp.path(), "nobudget.toml", MINIMAL);
    assert_eq!(code(&ringsim(&["sweep", cfg.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()])), 1);
    assert_eq!(code(&ringsim(&["bogus"])), 1);
    assert_eq!(code(&ringsim(&["--help"])), 0);
}

#[test]
fn plot_renders_one_series_per_method() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "three.toml", THREE_WORKERS);
    let out = tmp.path().join("out");
    assert_eq!(code(&run_in(&cfg, &out, &[])), 0);
    let svg_path = tmp.path().join("plot.svg");
    let o = ringsim(&["plot", out.to_str().unwrap(), "--window", "5", "--output", svg_path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert!(svg.contains("ringleader (3 runs)"));

    assert_eq!(code(&ringsim(&["plot", out.to_str().unwrap(), "--window", "0"])), 1);
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&ringsim(&["plot", empty.to_str().unwrap()])), 1);
}

#[test]
fn partition_demo_prints_equal_shards() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
algorithm = "ringleader"
seeds = [0]
[problem]
kind = "softmax"
features = 4
classes = 3
alpha = 0.1
samples_per_client = 30
seed = 2
[workers]
n = 5
generator = "paper"
[stepsize]
policy = "fixed"
gamma = 0.1
[horizon]
iterations = 5
"#;
    let cfg = write_config(tmp.path(), "soft.toml", text);
    let o = ringsim(&["partition-demo", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "client,class_0,class_1,class_2,total");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| l.ends_with(",30")));

    let quad = write_config(tmp.path(), "quad.toml", MINIMAL);
    assert_eq!(code(&ringsim(&["partition-demo", quad.to_str().unwrap()])), 1);
}
