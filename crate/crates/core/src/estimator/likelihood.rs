//! Logit-smoothed accept–reject choice probabilities and the simulated
//! log-likelihood of one physician's decisions, with analytic gradients.
//!
//! For draw `r` the posterior z-score is `q = mu / sigma`, which after
//! substituting the signals is `q = (xi B + eta A) / sqrt(A B (A + B))` with
//! `A = sigma_xi^2 + 1` and `B = sigma_eta^2`. The smoothed probability of
//! prescribing is `S1 = 1 / (1 + exp((beta - Φ(q)) / lambda))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PatientCase, PhysicianParams};
use crate::normal;
use crate::sampling::{mlhs_draws, DrawSet, StandardDraws};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    pub lambda: f64,
    pub r_count: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            r_count: 1000,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.r_count == 0 {
            return Err(Error::Config("r_count must be at least 1".into()));
        }
        Ok(())
    }
}

/// `(1 / (1 + e^x), 1 / (1 + e^-x))` without overflow.
#[inline]
fn logistic_pair(x: f64) -> (f64, f64) {
    if x > 0.0 {
        let e = (-x).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    } else {
        let e = x.exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    }
}

/// Smoothed simulated probability of prescribing for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedProbability {
    pub p1: f64,
    pub p0: f64,
    /// `S1` for every draw.
    pub s_values: Vec<f64>,
}

/// Simulated probability that the physician prescribes to `case`, averaging
/// the logit kernel over the draws (conditioned on `case.y`).
pub fn smoothed_choice_probability(
    case: &PatientCase,
    params: &PhysicianParams,
    draws: &DrawSet,
    cfg: &SmoothingConfig,
) -> SmoothedProbability {
    let std = StandardDraws::new(case.tau(), case.y, draws);
    let kernel = Kernel::new(params);
    let mut s_values = Vec::with_capacity(std.len());
    let (mut p1, mut p0) = (0.0, 0.0);
    for r in 0..std.len() {
        let xi = case.tau() + params.sigma_xi() * std.z_xi[r];
        let eta = std.nu[r] + params.sigma_eta() * std.z_eta[r];
        let q = kernel.z_score(xi, eta);
        let (s1, s0) = logistic_pair((params.beta() - normal::cdf(q)) / cfg.lambda);
        s_values.push(s1);
        p1 += s1;
        p0 += s0;
    }
    let r = std.len() as f64;
    SmoothedProbability {
        p1: p1 / r,
        p0: p0 / r,
        s_values,
    }
}

/// Per-evaluation constants shared by all draws.
struct Kernel {
    a: f64,
    b: f64,
    inv_root_m: f64,
    sx: f64,
    se: f64,
    // d log M / d sigma_xi and d log M / d sigma_eta, with M = A B (A + B).
    dlogm_dsx: f64,
    dlogm_dse: f64,
}

impl Kernel {
    fn new(params: &PhysicianParams) -> Self {
        let sx = params.sigma_xi();
        let se = params.sigma_eta();
        let a = sx * sx + 1.0;
        let b = se * se;
        let m = a * b * (a + b);
        Self {
            a,
            b,
            inv_root_m: 1.0 / m.sqrt(),
            sx,
            se,
            dlogm_dsx: 2.0 * sx * (2.0 * a + b) / (a * (a + b)),
            dlogm_dse: 2.0 * se * (a + 2.0 * b) / (b * (a + b)),
        }
    }

    #[inline]
    fn z_score(&self, xi: f64, eta: f64) -> f64 {
        (xi * self.b + eta * self.a) * self.inv_root_m
    }
}

/// Parameter-free simulation inputs for one patient.
#[derive(Debug, Clone)]
pub struct CaseDraws {
    pub tau: f64,
    pub y: bool,
    pub d: bool,
    pub draws: StandardDraws,
}

/// One physician's observations with their fixed simulation draws.
///
/// Draws are keyed by `(seed, position)`, so the same data in the same order
/// always sees the same draws (common random numbers across evaluations).
#[derive(Debug, Clone)]
pub struct PhysicianData {
    pub cases: Vec<CaseDraws>,
    pub lambda: f64,
}

/// Log-likelihood and its gradient with respect to `(beta, sigma_xi, sigma_eta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub gradient: [f64; 3],
}

impl PhysicianData {
    pub fn new(cases: &[PatientCase], seed: u64, cfg: &SmoothingConfig) -> Self {
        let cases = cases
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let ds = mlhs_draws(seed, cfg.r_count, 3, i as u64);
                CaseDraws {
                    tau: c.tau(),
                    y: c.y,
                    d: c.d,
                    draws: StandardDraws::new(c.tau(), c.y, &ds),
                }
            })
            .collect();
        Self {
            cases,
            lambda: cfg.lambda,
        }
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Smoothed probabilities of prescribing for every case.
    pub fn probabilities(&self, params: &PhysicianParams) -> Vec<f64> {
        let kernel = Kernel::new(params);
        self.cases
            .iter()
            .map(|c| {
                let (mut p1, r) = (0.0, c.draws.len() as f64);
                for k in 0..c.draws.len() {
                    let xi = c.tau + kernel.sx * c.draws.z_xi[k];
                    let eta = c.draws.nu[k] + kernel.se * c.draws.z_eta[k];
                    let q = kernel.z_score(xi, eta);
                    p1 += logistic_pair((params.beta() - normal::cdf(q)) / self.lambda).0;
                }
                p1 / r
            })
            .collect()
    }

    /// Simulated log-likelihood. `weights` gives a multiplicity per case
    /// (bootstrap resamples); `None` weights every case once.
    pub fn log_likelihood(&self, params: &PhysicianParams, weights: Option<&[u32]>) -> LogLikelihood {
        let kernel = Kernel::new(params);
        let beta = params.beta();
        let inv_lambda = 1.0 / self.lambda;
        let mut value = 0.0;
        let mut gradient = [0.0; 3];
        for (i, c) in self.cases.iter().enumerate() {
            let w = match weights {
                Some(w) if w[i] == 0 => continue,
                Some(w) => f64::from(w[i]),
                None => 1.0,
            };
            let (mut p1, mut p0) = (0.0, 0.0);
            let (mut dp_beta, mut dp_sx, mut dp_se) = (0.0, 0.0, 0.0);
            let tau = c.tau;
            for k in 0..c.draws.len() {
                let zx = c.draws.z_xi[k];
                let ze = c.draws.z_eta[k];
                let xi = tau + kernel.sx * zx;
                let eta = c.draws.nu[k] + kernel.se * ze;
                let n = xi * kernel.b + eta * kernel.a;
                let q = n * kernel.inv_root_m;
                let (s1, s0) = logistic_pair((beta - normal::cdf(q)) * inv_lambda);
                p1 += s1;
                p0 += s0;
                // dS1/dx = -S1 S0 for x = (beta - Φ(q)) / lambda.
                let g = s1 * s0 * inv_lambda;
                dp_beta -= g;
                let gq = g * normal::pdf(q);
                let dn_sx = zx * kernel.b + eta * 2.0 * kernel.sx;
                let dn_se = xi * 2.0 * kernel.se + kernel.a * ze;
                dp_sx += gq * (dn_sx - 0.5 * n * kernel.dlogm_dsx) * kernel.inv_root_m;
                dp_se += gq * (dn_se - 0.5 * n * kernel.dlogm_dse) * kernel.inv_root_m;
            }
            let r = c.draws.len() as f64;
            let (p1, p0) = (p1 / r, p0 / r);
            let score = if c.d {
                value += w * p1.ln();
                1.0 / p1
            } else {
                value += w * p0.ln();
                -1.0 / p0
            };
            gradient[0] += w * score * dp_beta / r;
            gradient[1] += w * score * dp_sx / r;
            gradient[2] += w * score * dp_se / r;
        }
        LogLikelihood { value, gradient }
    }
}

/// Log-likelihood of `cases` under `params` with one draw set per case.
pub fn log_likelihood(
    cases: &[PatientCase],
    params: &PhysicianParams,
    draws: &[DrawSet],
    cfg: &SmoothingConfig,
) -> Result<LogLikelihood> {
    if cases.len() != draws.len() {
        return Err(Error::Domain(format!(
            "{} cases but {} draw sets",
            cases.len(),
            draws.len()
        )));
    }
    if let Some(first) = cases.first() {
        if let Some(other) = cases.iter().find(|c| c.physician_id != first.physician_id) {
            return Err(Error::Domain(format!(
                "cases mix physicians {} and {}",
                first.physician_id, other.physician_id
            )));
        }
    }
    let data = PhysicianData {
        cases: cases
            .iter()
            .zip(draws)
            .map(|(c, ds)| CaseDraws {
                tau: c.tau(),
                y: c.y,
                d: c.d,
                draws: StandardDraws::new(c.tau(), c.y, ds),
            })
            .collect(),
        lambda: cfg.lambda,
    };
    Ok(data.log_likelihood(params, None))
}
