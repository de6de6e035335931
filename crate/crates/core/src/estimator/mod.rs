//! Per-physician simulated maximum likelihood.
//!
//! The optimizer works on an unconstrained scale, `beta = logistic(b)`,
//! `sigma_xi = exp(s1)`, `sigma_eta = exp(s2)`, clipped to a wide box so that
//! weakly identified directions cannot drift without bound. Draws are
//! generated once per fit and reused for every evaluation.

mod bootstrap;
mod likelihood;
mod optimizer;

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PatientCase, PhysicianParams};
use crate::sampling::{keyed_seed, stream_rng};

pub use bootstrap::{bootstrap, bootstrap_fitted, percentile, BootstrapSummary, Interval};
pub use likelihood::{
    log_likelihood, smoothed_choice_probability, CaseDraws, LogLikelihood, PhysicianData,
    SmoothedProbability, SmoothingConfig,
};
pub use optimizer::{minimize, Minimum, OptimizerConfig};

/// Estimates of `sigma_xi` above this are reported as carrying no usable
/// type-signal information.
pub const UNINFORMED_SIGMA_XI: f64 = 50.0;

/// Lower and upper limits of the transformed parameters `(b, s1, s2)`.
pub const TRANSFORMED_LOWER: [f64; 3] = [-10.0, -6.907_755_278_982_137, -6.907_755_278_982_137];
pub const TRANSFORMED_UPPER: [f64; 3] = [10.0, 6.907_755_278_982_137, 4.605_170_185_988_092];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub smoothing: SmoothingConfig,
    pub optimizer: OptimizerConfig,
    pub min_observations: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            smoothing: SmoothingConfig::default(),
            optimizer: OptimizerConfig::default(),
            min_observations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub physician_id: String,
    pub params: PhysicianParams,
    pub loglik: f64,
    /// Projected gradient infinity norm of the mean negative log-likelihood,
    /// transformed scale.
    pub gradient_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_obs: usize,
    /// `sigma_xi` estimate beyond [`UNINFORMED_SIGMA_XI`].
    pub uninformed_type_signal: bool,
    pub bootstrap: Option<BootstrapSummary>,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps `(b, s1, s2)` to parameters.
pub fn params_from_transformed(theta: &[f64]) -> PhysicianParams {
    PhysicianParams::new(logistic(theta[0]), theta[1].exp(), theta[2].exp())
        .expect("transformed parameters always map inside the parameter space")
}

/// Inverse of [`params_from_transformed`].
pub fn transformed_from_params(params: &PhysicianParams) -> [f64; 3] {
    let b = params.beta();
    [
        (b / (1.0 - b)).ln(),
        params.sigma_xi().max(1e-300).ln(),
        params.sigma_eta().ln(),
    ]
}

/// Mean negative log-likelihood and its gradient on the transformed scale.
pub fn transformed_objective(data: &PhysicianData, theta: &[f64], weights: Option<&[u32]>) -> (f64, Vec<f64>) {
    let params = params_from_transformed(theta);
    let ll = data.log_likelihood(&params, weights);
    let n = match weights {
        Some(w) => w.iter().map(|&k| f64::from(k)).sum::<f64>(),
        None => data.len() as f64,
    }
    .max(1.0);
    let beta = params.beta();
    let grad = vec![
        -ll.gradient[0] * beta * (1.0 - beta) / n,
        -ll.gradient[1] * params.sigma_xi() / n,
        -ll.gradient[2] * params.sigma_eta() / n,
    ];
    (-ll.value / n, grad)
}

/// Runs one optimization from `start` (transformed scale).
pub fn fit_from_start(
    data: &PhysicianData,
    start: &[f64],
    weights: Option<&[u32]>,
    cfg: &OptimizerConfig,
) -> Minimum {
    minimize(
        |theta| transformed_objective(data, theta, weights),
        start,
        &TRANSFORMED_LOWER,
        &TRANSFORMED_UPPER,
        cfg,
    )
}

/// Default start plus `restarts` jittered copies, keyed by physician.
pub fn starting_points(physician_id: &str, seed: u64, cfg: &OptimizerConfig) -> Vec<[f64; 3]> {
    let base = [0.0, 2f64.ln(), 2f64.ln()];
    let mut starts = vec![base];
    let mut rng = stream_rng(keyed_seed(seed, &format!("restart:{physician_id}")), 0);
    for _ in 0..cfg.restarts {
        let mut s = base;
        for v in s.iter_mut() {
            *v += cfg.jitter * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        starts.push(s);
    }
    starts
}

fn check_physician(cases: &[PatientCase], min_obs: usize) -> Result<&str> {
    let first = cases.first().ok_or_else(|| Error::TooFewObservations {
        physician_id: String::new(),
        n: 0,
        min: min_obs,
    })?;
    let id = first.physician_id.as_str();
    if let Some(other) = cases.iter().find(|c| c.physician_id != id) {
        return Err(Error::Domain(format!(
            "cases mix physicians {id} and {}",
            other.physician_id
        )));
    }
    if cases.len() < min_obs {
        return Err(Error::TooFewObservations {
            physician_id: id.to_string(),
            n: cases.len(),
            min: min_obs,
        });
    }
    Ok(id)
}

/// Canonical (patient-id) order and the physician's draw data.
pub fn prepare_physician(cases: &[PatientCase], cfg: &EstimatorConfig, seed: u64) -> Result<(String, PhysicianData)> {
    cfg.smoothing.validate()?;
    let id = check_physician(cases, cfg.min_observations)?.to_string();
    let mut sorted = cases.to_vec();
    sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let data = PhysicianData::new(&sorted, keyed_seed(seed, &id), &cfg.smoothing);
    Ok((id, data))
}

fn result_from_minimum(physician_id: &str, m: &Minimum, n: usize) -> EstimationResult {
    let params = params_from_transformed(&m.x);
    EstimationResult {
        physician_id: physician_id.to_string(),
        params,
        loglik: -m.value * n as f64,
        gradient_norm: m.projected_grad_norm,
        converged: m.converged,
        iterations: m.iterations,
        n_obs: n,
        uninformed_type_signal: params.sigma_xi() > UNINFORMED_SIGMA_XI,
        bootstrap: None,
    }
}

/// Fits prepared data from every starting point and keeps the best optimum.
pub fn fit_prepared(physician_id: &str, data: &PhysicianData, cfg: &EstimatorConfig, seed: u64) -> EstimationResult {
    let starts = starting_points(physician_id, seed, &cfg.optimizer);
    let mut best: Option<Minimum> = None;
    for start in &starts {
        let m = fit_from_start(data, start, None, &cfg.optimizer);
        let better = match &best {
            None => true,
            Some(b) => m.value < b.value || (!b.value.is_finite() && m.value.is_finite()),
        };
        if better {
            best = Some(m);
        }
    }
    let best = best.expect("at least one starting point");
    result_from_minimum(physician_id, &best, data.len())
}

/// Simulated maximum likelihood estimate for one physician.
///
/// Non-convergence is reported through [`EstimationResult::converged`].
pub fn fit_physician(cases: &[PatientCase], cfg: &EstimatorConfig, seed: u64) -> Result<EstimationResult> {
    let (id, data) = prepare_physician(cases, cfg, seed)?;
    Ok(fit_prepared(&id, &data, cfg, seed))
}

/// Groups cases by physician id (sorted).
pub fn group_by_physician(cases: &[PatientCase]) -> BTreeMap<String, Vec<PatientCase>> {
    let mut groups: BTreeMap<String, Vec<PatientCase>> = BTreeMap::new();
    for c in cases {
        groups.entry(c.physician_id.clone()).or_default().push(c.clone());
    }
    groups
}

/// Fits every physician in parallel. Physicians with too few observations are
/// returned as errors in the second list; output order follows physician id.
pub fn fit_all(
    cases: &[PatientCase],
    cfg: &EstimatorConfig,
    seed: u64,
) -> (Vec<EstimationResult>, Vec<Error>) {
    let groups: Vec<_> = group_by_physician(cases).into_iter().collect();
    let results: Vec<Result<EstimationResult>> = groups
        .par_iter()
        .map(|(_, group)| fit_physician(group, cfg, seed))
        .collect();
    let mut fits = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(f) => fits.push(f),
            Err(e) => errors.push(e),
        }
    }
    (fits, errors)
}
