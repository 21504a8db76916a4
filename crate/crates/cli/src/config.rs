use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use ringsim::Algorithm;

use crate::CliError;

/// Stepsize grid tried by `sweep` when the config does not list one.
pub const DEFAULT_GRID: [f64; 10] = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0];

/// One experiment, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(deserialize_with = "one_or_many")]
    pub algorithm: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Noise level of the quadratic oracle; for softmax it only replaces the
    /// estimate used by the formulas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
    pub problem: ProblemConfig,
    pub workers: WorkersConfig,
    pub stepsize: StepsizeConfig,
    #[serde(default)]
    pub horizon: HorizonConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    Quadratic {
        d: usize,
        #[serde(default = "one")]
        heterogeneity: f64,
        #[serde(default)]
        seed: u64,
    },
    Softmax {
        features: usize,
        classes: usize,
        alpha: f64,
        samples_per_client: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkersConfig {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<f64>>,
    /// `"paper"`: `τᵢ = i + |ηᵢ|`, `ηᵢ ~ N(0, i)`, drawn once per run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// Per-worker power profiles as `[start, rate]` breakpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universal: Option<Vec<Vec<(f64, f64)>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepsizeConfig {
    Theory,
    Fixed {
        gamma: f64,
    },
    Sweep {
        #[serde(default = "default_grid")]
        grid: Vec<f64>,
        /// Moving-average window applied to the median curve before ranking.
        #[serde(default = "default_window")]
        window: usize,
    },
}

fn default_grid() -> Vec<f64> {
    DEFAULT_GRID.to_vec()
}

fn default_window() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_grad_norm_sq: Option<f64>,
}

impl HorizonConfig {
    pub fn is_empty(&self) -> bool {
        self.iterations.is_none() && self.time_budget.is_none() && self.target_grad_norm_sq.is_none()
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(bad("seeds must not be empty"));
        }
        if self.algorithm.is_empty() {
            return Err(bad("no algorithm given"));
        }
        let w = &self.workers;
        if w.n == 0 {
            return Err(bad("workers.n must be at least 1"));
        }
        let sources = [w.taus.is_some(), w.generator.is_some(), w.universal.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(bad("workers needs exactly one of taus, generator, universal"));
        }
        if let Some(t) = &w.taus {
            if t.len() != w.n {
                return Err(bad(format!("workers.taus has {} entries for n={}", t.len(), w.n)));
            }
        }
        if let Some(g) = &w.generator {
            if g != "paper" {
                return Err(bad(format!("unknown worker generator {g:?}; expected \"paper\"")));
            }
        }
        if let Some(u) = &w.universal {
            if u.len() != w.n {
                return Err(bad(format!("workers.universal has {} profiles for n={}", u.len(), w.n)));
            }
        }
        for v in [self.epsilon, self.sigma_sq].into_iter().flatten() {
            if !v.is_finite() || v < 0.0 {
                return Err(bad(format!("epsilon and sigma_sq must be finite and non-negative, got {v}")));
            }
        }
        if self.epsilon == Some(0.0) {
            return Err(bad("epsilon must be positive"));
        }
        match &self.stepsize {
            StepsizeConfig::Theory if self.epsilon.is_none() => {
                return Err(bad("the theory stepsize needs epsilon"));
            }
            StepsizeConfig::Fixed { gamma } if !(gamma.is_finite() && *gamma > 0.0) => {
                return Err(bad(format!("fixed gamma must be positive, got {gamma}")));
            }
            StepsizeConfig::Sweep { grid, window } => {
                if grid.is_empty() || grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                    return Err(bad("sweep grid must be a non-empty list of positive stepsizes"));
                }
                if *window == 0 {
                    return Err(bad("sweep window must be at least 1"));
                }
            }
            _ => {}
        }
        if self.horizon.is_empty() && self.stepsize != StepsizeConfig::Theory {
            return Err(bad("horizon needs iterations, time_budget or target_grad_norm_sq"));
        }
        if let Some(t) = self.horizon.time_budget {
            if !(t.is_finite() && t > 0.0) {
                return Err(bad(format!("time_budget must be positive, got {t}")));
            }
        }
        for name in &self.algorithm {
            self.algorithm_for(name, 1.0)?;
        }
        Ok(())
    }

    /// Resolves an algorithm name; `sigma_sq` is the problem's value unless overridden.
    pub fn algorithm_for(&self, name: &str, sigma_sq: f64) -> Result<Algorithm, CliError> {
        let needs_eps = matches!(name, "malenia" | "ringleader-universal");
        let eps = match self.epsilon {
            Some(e) => e,
            None if needs_eps => return Err(bad(format!("{name} needs epsilon"))),
            None => 1.0,
        };
        Algorithm::from_name(name, self.sigma_sq.unwrap_or(sigma_sq), eps).map_err(|e| bad(e.to_string()))
    }
}

/// Parses `--seeds` as `a..b` (half-open) or a comma-separated list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let err = || bad(format!("cannot parse seeds {s:?}; use a..b or a,b,c"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| err())?;
        let b: u64 = b.trim().parse().map_err(|_| err())?;
        (a..b).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| err())).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(err());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn minimal_config_parses() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.algorithm, vec!["ringleader"]);
        assert_eq!(c.problem, ProblemConfig::Quadratic { d: 2, heterogeneity: 1.0, seed: 0 });
        assert_eq!(c.horizon.iterations, Some(10));
    }

    #[test]
    fn sweep_defaults_to_the_grid() {
        let text = MINIMAL.replace("policy = \"fixed\"\n        gamma = 0.1", "policy = \"sweep\"");
        let c = RunConfig::parse(&text).unwrap();
        assert_eq!(c.stepsize, StepsizeConfig::Sweep { grid: DEFAULT_GRID.to_vec(), window: 1 });
    }

    #[test]
    fn rejects_bad_configs() {
        for (from, to) in [
            ("seeds = [0]", "seeds = []"),
            ("n = 1", "n = 0"),
            ("taus = [1.0]", "taus = [1.0]\n        generator = \"paper\""),
            ("taus = [1.0]", "taus = [1.0, 2.0]"),
            ("\"ringleader\"", "\"ringmaster\""),
            ("\"ringleader\"", "\"malenia\""),
            ("gamma = 0.1", "gamma = 0.1\n        grid = [0.1]"),
            ("iterations = 10", "iters = 10"),
            ("policy = \"fixed\"", "policy = \"theory\""),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(RunConfig::parse(&text).is_err(), "accepted {to}");
        }
    }

    #[test]
    fn seed_ranges_and_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 9").unwrap(), vec![4, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
