//! Synthetic populations, ROC sweeps over preferences and the sensitivity of
//! decisions to the type-signal noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{PhysicianData, SmoothingConfig};
use crate::model::{self, clamp_risk, PatientCase, PhysicianParams};
use crate::normal;
use crate::sampling::{keyed_seed, stream_rng};

/// Normal law truncated to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedNormal {
    fn validate(&self, name: &str) -> Result<()> {
        if !(self.sd >= 0.0 && self.lo <= self.hi && self.mean.is_finite()) {
            return Err(Error::Config(format!("invalid law for {name}: {self:?}")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.sd == 0.0 {
            return self.mean.clamp(self.lo, self.hi);
        }
        let a = normal::cdf((self.lo - self.mean) / self.sd);
        let b = normal::cdf((self.hi - self.mean) / self.sd);
        let u: f64 = rng.random();
        let x = self.mean + self.sd * normal::quantile(a + u * (b - a));
        x.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ParamLaw {
    Fixed {
        beta: f64,
        sigma_xi: f64,
        sigma_eta: f64,
    },
    Independent {
        beta: TruncatedNormal,
        sigma_xi: TruncatedNormal,
        sigma_eta: TruncatedNormal,
    },
}

impl Default for ParamLaw {
    /// Cross-physician means and standard deviations of the reference
    /// estimates.
    fn default() -> Self {
        ParamLaw::Independent {
            beta: TruncatedNormal { mean: 0.56, sd: 0.13, lo: 0.05, hi: 0.95 },
            sigma_xi: TruncatedNormal { mean: 6.38, sd: 3.59, lo: 0.1, hi: 30.0 },
            sigma_eta: TruncatedNormal { mean: 2.18, sd: 1.40, lo: 0.2, hi: 10.0 },
        }
    }
}

impl ParamLaw {
    fn validate(&self) -> Result<()> {
        match self {
            ParamLaw::Fixed { beta, sigma_xi, sigma_eta } => {
                PhysicianParams::new(*beta, *sigma_xi, *sigma_eta).map(|_| ())
            }
            ParamLaw::Independent { beta, sigma_xi, sigma_eta } => {
                beta.validate("beta")?;
                sigma_xi.validate("sigma_xi")?;
                sigma_eta.validate("sigma_eta")?;
                if !(beta.lo > 0.0 && beta.hi < 1.0 && sigma_xi.lo >= 0.0 && sigma_eta.lo > 0.0) {
                    return Err(Error::Config("parameter law support leaves the parameter space".into()));
                }
                Ok(())
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> PhysicianParams {
        let (b, sx, se) = match self {
            ParamLaw::Fixed { beta, sigma_xi, sigma_eta } => (*beta, *sigma_xi, *sigma_eta),
            ParamLaw::Independent { beta, sigma_xi, sigma_eta } => {
                (beta.sample(rng), sigma_xi.sample(rng), sigma_eta.sample(rng))
            }
        };
        PhysicianParams::new(b, sx, se).expect("validated law")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RiskLaw {
    Beta { a: f64, b: f64 },
    Uniform { lo: f64, hi: f64 },
    Constant { value: f64 },
}

impl Default for RiskLaw {
    /// Mean 0.4; the AUC of risk against realized sickness is about 0.73.
    fn default() -> Self {
        RiskLaw::Beta { a: 2.2, b: 3.3 }
    }
}

impl RiskLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            RiskLaw::Beta { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
            RiskLaw::Uniform { lo, hi } => 0.0 <= lo && lo < hi && hi <= 1.0,
            RiskLaw::Constant { value } => value > 0.0 && value < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid risk law {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let raw = match *self {
            RiskLaw::Beta { a, b } => Beta::new(a, b).expect("validated").sample(rng),
            RiskLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            RiskLaw::Constant { value } => value,
        };
        clamp_risk(raw).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub n_physicians: usize,
    pub patients_per_physician: usize,
    pub param_law: ParamLaw,
    pub risk_law: RiskLaw,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_physicians: 50,
            patients_per_physician: 2000,
            param_law: ParamLaw::default(),
            risk_law: RiskLaw::default(),
            seed: 1,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_physicians == 0 || self.patients_per_physician == 0 {
            return Err(Error::Config("population must have physicians and patients".into()));
        }
        self.param_law.validate()?;
        self.risk_law.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    /// True parameters, one per physician, sorted by id.
    pub physicians: Vec<(String, PhysicianParams)>,
    /// Sorted by physician id, then patient id.
    pub cases: Vec<PatientCase>,
}

pub fn physician_id(index: usize) -> String {
    format!("phys{index:04}")
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len()
}

/// Draws a type, sickness and one pair of signals per patient, and records
/// the model's decision.
pub fn simulate_patient(
    rng: &mut ChaCha8Rng,
    risk: f64,
    params: &PhysicianParams,
) -> (bool, bool) {
    let tau = normal::quantile(risk);
    let nu = tau + rng.sample::<f64, _>(StandardNormal);
    let xi = tau + params.sigma_xi() * rng.sample::<f64, _>(StandardNormal);
    let eta = nu + params.sigma_eta() * rng.sample::<f64, _>(StandardNormal);
    (nu > 0.0, model::decide(xi, eta, params))
}

pub fn simulate_population(spec: &PopulationSpec) -> Result<Population> {
    spec.validate()?;
    let base = keyed_seed(spec.seed, "population");
    let width = digits(spec.patients_per_physician - 1);
    let per: Vec<((String, PhysicianParams), Vec<PatientCase>)> = (0..spec.n_physicians)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(base, j as u64);
            let params = spec.param_law.sample(&mut rng);
            let id = physician_id(j);
            let cases = (0..spec.patients_per_physician)
                .map(|i| {
                    let risk = spec.risk_law.sample(&mut rng);
                    let (y, d) = simulate_patient(&mut rng, risk, &params);
                    PatientCase::new(id.clone(), format!("{i:0width$}"), risk, y, d)
                        .expect("clamped risk")
                })
                .collect();
            ((id, params), cases)
        })
        .collect();
    let mut physicians = Vec::with_capacity(per.len());
    let mut cases = Vec::with_capacity(spec.n_physicians * spec.patients_per_physician);
    for (p, c) in per {
        physicians.push(p);
        cases.extend(c);
    }
    Ok(Population { physicians, cases })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub beta: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ordered by false positive rate; starts at (0, 0) and ends at (1, 1).
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// True positive rate at `fpr`, linear between points.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let pts = &self.points;
        let k = pts.partition_point(|p| p.fpr < fpr);
        if k == 0 {
            return pts[0].tpr;
        }
        if k == pts.len() {
            return pts[k - 1].tpr;
        }
        let (a, b) = (pts[k - 1], pts[k]);
        if b.fpr == a.fpr {
            return b.tpr;
        }
        a.tpr + (b.tpr - a.tpr) * (fpr - a.fpr) / (b.fpr - a.fpr)
    }
}

/// Expected (FPR, TPR) as `beta` sweeps `beta_grid`, holding the noise
/// parameters of `params`.
pub fn simulate_roc(params: &PhysicianParams, cases: &[PatientCase], beta_grid: &[f64]) -> Result<RocCurve> {
    let n1 = cases.iter().filter(|c| c.y).count();
    let n0 = cases.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Degenerate("ROC needs both sick and healthy patients".into()));
    }
    let mut points: Vec<RocPoint> = beta_grid
        .par_iter()
        .map(|&b| -> Result<RocPoint> {
            let p = params.with_beta(b)?;
            let (mut tp, mut fp) = (0.0, 0.0);
            for c in cases {
                let pr = model::choice_probability(c.tau(), c.y, &p);
                if c.y {
                    tp += pr;
                } else {
                    fp += pr;
                }
            }
            Ok(RocPoint { beta: Some(b), fpr: fp / n0 as f64, tpr: tp / n1 as f64 })
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)));
    // Remove quadrature jitter so both coordinates are nondecreasing.
    let mut running = 0.0f64;
    for p in points.iter_mut() {
        running = running.max(p.tpr);
        p.tpr = running;
    }
    points.insert(0, RocPoint { beta: None, fpr: 0.0, tpr: 0.0 });
    points.push(RocPoint { beta: None, fpr: 1.0, tpr: 1.0 });
    Ok(RocCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub sigma_xi: f64,
    /// Mean absolute change in the expected probability of prescribing, in
    /// percentage points, between `sigma_xi` and `sigma_xi + step`.
    pub percent_change: f64,
}

/// Decision sensitivity to the type-signal noise at each `sigma_xi` in the
/// grid, using the smoothed simulator with common draws.
pub fn sensitivity_sweep(
    base: &PhysicianParams,
    cases: &[PatientCase],
    sigma_xi_grid: &[f64],
    step: f64,
    smoothing: &SmoothingConfig,
    seed: u64,
) -> Result<Vec<SensitivityPoint>> {
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("step must be nonnegative, got {step}")));
    }
    smoothing.validate()?;
    let data = PhysicianData::new(cases, keyed_seed(seed, "sensitivity"), smoothing);
    sigma_xi_grid
        .iter()
        .map(|&sx| {
            let lo = data.probabilities(&base.with_sigma_xi(sx)?);
            let hi = data.probabilities(&base.with_sigma_xi(sx + step)?);
            let n = lo.len().max(1) as f64;
            let mean_abs = lo.iter().zip(&hi).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
            Ok(SensitivityPoint { sigma_xi: sx, percent_change: 100.0 * mean_abs })
        })
        .collect()
}
