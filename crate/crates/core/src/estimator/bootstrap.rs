//! Patient-level bootstrap within a physician.
//!
//! Resamples are expressed as multiplicity weights over the original cases so
//! every replication reuses the draws of the point fit.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_from_start, fit_prepared, params_from_transformed, prepare_physician, starting_points, transformed_from_params};
use super::{EstimationResult, EstimatorConfig, PhysicianData, TRANSFORMED_LOWER, TRANSFORMED_UPPER};
use crate::error::{Error, Result};
use crate::model::PatientCase;
use crate::sampling::{keyed_seed, stream_rng};

pub const MIN_REPS: usize = 100;

/// Beta intervals wider than this are flagged as uninformative.
const WIDE_BETA_INTERVAL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub n_reps: usize,
    /// Replications that did not converge; excluded from the intervals.
    pub n_failed: usize,
    pub beta: Interval,
    pub sigma_xi: Interval,
    pub sigma_eta: Interval,
    pub uninformative: bool,
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn interval(mut values: Vec<f64>, point: f64) -> Interval {
    if values.is_empty() {
        return Interval { lo: point, hi: point };
    }
    values.sort_by(f64::total_cmp);
    Interval {
        lo: percentile(&values, 0.025).min(point),
        hi: percentile(&values, 0.975).max(point),
    }
}

fn resample_weights(n: usize, seed: u64, rep: usize) -> Vec<u32> {
    let mut rng = stream_rng(seed, rep as u64);
    let mut w = vec![0u32; n];
    for _ in 0..n {
        w[rng.random_range(0..n)] += 1;
    }
    w
}

/// Bootstraps an existing fit on prepared data.
pub fn bootstrap_fitted(
    data: &PhysicianData,
    estimate: &EstimationResult,
    cfg: &EstimatorConfig,
    n_reps: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if n_reps < MIN_REPS {
        return Err(Error::Config(format!("bootstrap needs at least {MIN_REPS} replications, got {n_reps}")));
    }
    let rep_seed = keyed_seed(seed, &format!("bootstrap:{}", estimate.physician_id));
    // Replications warm-start at the point estimate. When that sits on a
    // bound, the default start is tried as well so a replication can reach
    // an interior optimum.
    let point = transformed_from_params(&estimate.params);
    let mut starts = vec![point];
    let on_bound = (0..3).any(|k| point[k] <= TRANSFORMED_LOWER[k] + 1e-9 || point[k] >= TRANSFORMED_UPPER[k] - 1e-9);
    if on_bound {
        starts.push(starting_points(&estimate.physician_id, seed, &cfg.optimizer)[0]);
    }
    let reps: Vec<Option<[f64; 3]>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let w = resample_weights(data.len(), rep_seed, rep);
            let m = starts
                .iter()
                .map(|s| fit_from_start(data, s, Some(&w), &cfg.optimizer))
                .filter(|m| m.converged)
                .min_by(|a, b| a.value.total_cmp(&b.value))?;
            let p = params_from_transformed(&m.x);
            Some([p.beta(), p.sigma_xi(), p.sigma_eta()])
        })
        .collect();
    let ok: Vec<[f64; 3]> = reps.iter().flatten().copied().collect();
    let p = &estimate.params;
    let beta = interval(ok.iter().map(|r| r[0]).collect(), p.beta());
    let sigma_xi = interval(ok.iter().map(|r| r[1]).collect(), p.sigma_xi());
    let sigma_eta = interval(ok.iter().map(|r| r[2]).collect(), p.sigma_eta());
    let d_constant = data.cases.iter().all(|c| c.d) || data.cases.iter().all(|c| !c.d);
    Ok(BootstrapSummary {
        n_reps,
        n_failed: n_reps - ok.len(),
        uninformative: d_constant || ok.len() < 2 || beta.width() > WIDE_BETA_INTERVAL,
        beta,
        sigma_xi,
        sigma_eta,
    })
}

/// Point fit plus percentile 95% intervals from `n_reps` resamples.
pub fn bootstrap(
    cases: &[PatientCase],
    cfg: &EstimatorConfig,
    n_reps: usize,
    seed: u64,
) -> Result<EstimationResult> {
    let (id, data) = prepare_physician(cases, cfg, seed)?;
    let mut fit = fit_prepared(&id, &data, cfg, seed);
    fit.bootstrap = Some(bootstrap_fitted(&data, &fit, cfg, n_reps, seed)?);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.1) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn interval_contains_point() {
        let iv = interval(vec![0.2, 0.3, 0.4], 0.9);
        assert!(iv.contains(0.9));
        assert_eq!(interval(vec![], 0.5), Interval { lo: 0.5, hi: 0.5 });
    }

    #[test]
    fn weights_sum_to_n() {
        let w = resample_weights(50, 7, 3);
        assert_eq!(w.iter().sum::<u32>(), 50);
        assert_eq!(w, resample_weights(50, 7, 3));
        assert_ne!(w, resample_weights(50, 7, 4));
    }
}
