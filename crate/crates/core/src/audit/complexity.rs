use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

const MIN_POINTS: usize = 4;

/// One measured run configuration. `measured_time` is `None` when the run
/// never reached `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityPoint {
    pub method: String,
    pub l: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub sigma_sq: f64,
    pub n: usize,
    pub tau_n: f64,
    pub tau_avg: f64,
    pub measured_time: Option<f64>,
}

impl ComplexityPoint {
    /// `(LΔ/ε)(τₙ + τ_avg σ²/(nε))`.
    pub fn bound(&self) -> f64 {
        self.l * self.delta / self.epsilon * (self.tau_n + self.tau_avg * self.sigma_sq / (self.n as f64 * self.epsilon))
    }

    /// `σ²/(nε)`.
    pub fn noise_ratio(&self) -> f64 {
        self.sigma_sq / (self.n as f64 * self.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityFit {
    pub method: String,
    pub noise_ratio: f64,
    pub measured_time_to_eps: f64,
    pub bound: f64,
    /// `measured / bound`.
    pub fitted_constant: f64,
}

/// Fits `measured / bound` at every converged point.
///
/// Unconverged points are dropped and reported in the second return value.
/// Each method needs at least four points in total.
pub fn fit_time_complexity(points: &[ComplexityPoint]) -> Result<(Vec<ComplexityFit>, Vec<String>)> {
    let mut per_method: BTreeMap<&str, usize> = BTreeMap::new();
    for p in points {
        *per_method.entry(&p.method).or_default() += 1;
    }
    if let Some((m, c)) = per_method.iter().find(|(_, &c)| c < MIN_POINTS) {
        return Err(SimError::config(format!("method {m} has {c} grid points, need at least {MIN_POINTS}")));
    }
    let mut fits = Vec::new();
    let mut excluded = Vec::new();
    for p in points {
        let bound = p.bound();
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(SimError::NumericDomain(format!("{}: bound {bound} is not positive", p.method)));
        }
        match p.measured_time {
            Some(t) if t > 0.0 && t.is_finite() => fits.push(ComplexityFit {
                method: p.method.clone(),
                noise_ratio: p.noise_ratio(),
                measured_time_to_eps: t,
                bound,
                fitted_constant: t / bound,
            }),
            _ => excluded.push(format!("{} at sigma^2/(n eps) = {} did not reach eps", p.method, p.noise_ratio())),
        }
    }
    Ok((fits, excluded))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(method: &str, sigma_sq: f64, t: Option<f64>) -> ComplexityPoint {
        ComplexityPoint {
            method: method.into(),
            l: 2.0,
            delta: 1.0,
            epsilon: 0.5,
            sigma_sq,
            n: 10,
            tau_n: 100.0,
            tau_avg: 10.9,
            measured_time: t,
        }
    }

    #[test]
    fn bound_matches_hand_value() {
        // (2·1/0.5)·(100 + 10.9·50/5) = 4·209
        assert!((point("r", 50.0, None).bound() - 836.0).abs() < 1e-9);
        assert_eq!(point("r", 50.0, None).noise_ratio(), 10.0);
    }

    #[test]
    fn unconverged_points_are_excluded() {
        let pts: Vec<_> = [0.0, 5.0, 50.0, 500.0]
            .iter()
            .enumerate()
            .map(|(i, &s)| point("ringleader", s, (i != 2).then_some(400.0)))
            .collect();
        let (fits, excluded) = fit_time_complexity(&pts).unwrap();
        assert_eq!(fits.len(), 3);
        assert_eq!(excluded.len(), 1);
        assert!(fits.iter().all(|f| f.fitted_constant > 0.0 && f.fitted_constant.is_finite()));
        assert!((fits[0].fitted_constant - 400.0 / 400.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points_rejected() {
        let pts = vec![point("minibatch", 1.0, Some(1.0)); 3];
        assert!(fit_time_complexity(&pts).is_err());
    }
}
