//! Checks on the predictor and on model fit: the Poisson-Binomial test of
//! prediction unbiasedness, AUC and the AUC gain from adding the physician's
//! choice, calibration bins and simulated-versus-observed moments.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::group_by_physician;
use crate::model::{self, PatientCase, PhysicianParams};
use crate::sampling::{keyed_seed, stream_rng, truncated_normal_inverse, Side};

/// Exact distribution of a sum of independent Bernoulli(p_i) variables.
pub fn poisson_binomial_pmf(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("probability outside [0, 1]: {p}")));
    }
    let mut pmf = vec![0.0; p_values.len() + 1];
    pmf[0] = 1.0;
    for (i, &p) in p_values.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            pmf[k] = pmf[k] * (1.0 - p) + pmf[k - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    Ok(pmf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonBinomialTest {
    pub n: usize,
    pub observed_sum: usize,
    pub p_values: Vec<f64>,
    pub p_two_sided: f64,
    pub reject_at_5pct: bool,
}

/// Relative slack when comparing pmf values, so that outcomes with equal
/// probability are not split by rounding.
const PMF_TIE_TOLERANCE: f64 = 1e-7;

/// Two-sided test that `outcomes` are independent Bernoulli draws with the
/// given probabilities; the p-value sums every outcome no more likely than
/// the observed one.
pub fn poisson_binomial_test(p_values: &[f64], outcomes: &[bool]) -> Result<PoissonBinomialTest> {
    if p_values.is_empty() || p_values.len() != outcomes.len() {
        return Err(Error::Domain("need one outcome per probability, at least one".into()));
    }
    let pmf = poisson_binomial_pmf(p_values)?;
    let observed_sum = outcomes.iter().filter(|&&o| o).count();
    let cut = pmf[observed_sum] * (1.0 + PMF_TIE_TOLERANCE);
    let p_two_sided = pmf.iter().filter(|&&v| v <= cut).sum::<f64>().clamp(0.0, 1.0);
    Ok(PoissonBinomialTest {
        n: p_values.len(),
        observed_sum,
        p_values: p_values.to_vec(),
        p_two_sided,
        reject_at_5pct: p_two_sided < 0.05,
    })
}

/// Tests whether predicted risks are unbiased for one physician's patients.
pub fn unbiasedness_test(cases: &[PatientCase]) -> Result<PoissonBinomialTest> {
    let p: Vec<f64> = cases.iter().map(|c| c.risk()).collect();
    let y: Vec<bool> = cases.iter().map(|c| c.y).collect();
    poisson_binomial_test(&p, &y)
}

/// Mann–Whitney AUC with ties counted as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Domain("scores and labels differ in length".into()));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Degenerate("AUC needs both label classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, midranks for ties, kept in integers.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let pos = idx[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2_sum += pos * (i as u128 + j as u128 + 2);
        i = j + 1;
    }
    let (n0, n1) = (n0 as u128, n1 as u128);
    let u2 = rank2_sum - n1 * (n1 + 1);
    Ok(u2 as f64 / (2 * n0 * n1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAuc {
    pub auc_risk: f64,
    pub auc_combined: f64,
    pub delta: f64,
    /// How the risk and the decision were combined.
    pub combiner: String,
}

pub const DELTA_AUC_FOLDS: usize = 5;

/// Candidate weights on the decision in the score `tau + w d`; the largest
/// makes the decision dominate and ranks by risk within decision groups.
const CHOICE_WEIGHTS: [f64; 17] = [
    -1e6, -4.0, -2.0, -1.0, -0.5, -0.25, -0.1, 0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 1e6,
];

/// AUC gain from adding the physician's decision to the predicted risk.
///
/// Patients are split into folds by position modulo the fold count. On each
/// held-out fold the score is `tau + w d`, with `w` chosen from a fixed grid
/// to maximize AUC on the other folds; the pooled held-out scores give the
/// combined AUC.
pub fn delta_auc_with_choice(cases: &[PatientCase]) -> Result<DeltaAuc> {
    if cases.len() < 100 {
        return Err(Error::Domain(format!("need at least 100 cases, got {}", cases.len())));
    }
    let labels: Vec<bool> = cases.iter().map(|c| c.y).collect();
    let tau: Vec<f64> = cases.iter().map(|c| c.tau()).collect();
    let auc_risk = auc(&tau, &labels)?;
    let score = |w: f64, c: &PatientCase| c.tau() + if c.d { w } else { 0.0 };
    let mut held_out = vec![0.0; cases.len()];
    let mut chosen = Vec::with_capacity(DELTA_AUC_FOLDS);
    for fold in 0..DELTA_AUC_FOLDS {
        let train: Vec<&PatientCase> = cases.iter().enumerate().filter(|(i, _)| i % DELTA_AUC_FOLDS != fold).map(|(_, c)| c).collect();
        let train_labels: Vec<bool> = train.iter().map(|c| c.y).collect();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &w in &CHOICE_WEIGHTS {
            let s: Vec<f64> = train.iter().map(|c| score(w, c)).collect();
            let a = auc(&s, &train_labels).unwrap_or(0.5);
            if a > best.0 {
                best = (a, w);
            }
        }
        chosen.push(best.1);
        for (i, c) in cases.iter().enumerate().filter(|(i, _)| i % DELTA_AUC_FOLDS == fold) {
            held_out[i] = score(best.1, c);
        }
    }
    let auc_combined = auc(&held_out, &labels)?;
    Ok(DeltaAuc {
        auc_risk,
        auc_combined,
        delta: auc_combined - auc_risk,
        combiner: format!(
            "score = probit(risk) + w*d, w chosen per fold from a fixed grid by training AUC, {DELTA_AUC_FOLDS} folds by position; chosen w = {chosen:?}"
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub mean_score: f64,
    pub mean_label: f64,
}

/// Averages over consecutive groups of `bin_size` patients sorted by score;
/// a trailing partial group is dropped.
pub fn calibration_bins(scores: &[f64], labels: &[bool], bin_size: usize) -> Result<Vec<CalibrationPoint>> {
    if bin_size == 0 {
        return Err(Error::Domain("bin size must be at least 1".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Domain("scores and labels differ in length".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    Ok(idx
        .chunks_exact(bin_size)
        .map(|chunk| CalibrationPoint {
            mean_score: chunk.iter().map(|&i| scores[i]).sum::<f64>() / bin_size as f64,
            mean_label: chunk.iter().filter(|&&i| labels[i]).count() as f64 / bin_size as f64,
        })
        .collect())
}

/// Decision rates over all of a physician's patients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMoments {
    /// Mean of `d`.
    pub prescribe_rate: f64,
    /// Mean of `d (1 - y)`.
    pub overprescribe_rate: f64,
    /// Mean of `(1 - d) y`.
    pub underprescribe_rate: f64,
}

impl FitMoments {
    /// Rates from per-patient prescription probabilities (0/1 for realized
    /// decisions).
    pub fn from_probabilities(y: &[bool], p: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mut m = FitMoments { prescribe_rate: 0.0, overprescribe_rate: 0.0, underprescribe_rate: 0.0 };
        for (&yi, &pi) in y.iter().zip(p) {
            m.prescribe_rate += pi;
            if yi {
                m.underprescribe_rate += 1.0 - pi;
            } else {
                m.overprescribe_rate += pi;
            }
        }
        m.prescribe_rate /= n;
        m.overprescribe_rate /= n;
        m.underprescribe_rate /= n;
        m
    }

    pub fn family(&self, k: usize) -> f64 {
        [self.prescribe_rate, self.overprescribe_rate, self.underprescribe_rate][k]
    }
}

pub const MOMENT_FAMILIES: [&str; 3] = ["prescribe", "overprescribe", "underprescribe"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    /// Model-implied choice probabilities.
    Expected,
    /// One simulated decision per patient.
    Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub physician_id: String,
    pub observed: FitMoments,
    pub simulated: FitMoments,
}

/// One simulated decision for a patient with known type and sickness.
fn simulate_decision<R: Rng>(rng: &mut R, tau: f64, y: bool, params: &PhysicianParams) -> bool {
    let u: f64 = rng.random();
    let nu = truncated_normal_inverse(u, tau, Side::from_sickness(y)).value;
    let xi = tau + params.sigma_xi() * rng.sample::<f64, _>(StandardNormal);
    let eta = nu + params.sigma_eta() * rng.sample::<f64, _>(StandardNormal);
    model::decide(xi, eta, params)
}

/// Observed and simulated decision rates per physician, using the observed
/// types and sickness outcomes.
pub fn fit_moments(
    cases: &[PatientCase],
    estimates: &BTreeMap<String, PhysicianParams>,
    mode: MomentMode,
    seed: u64,
) -> Result<Vec<MomentPair>> {
    group_by_physician(cases)
        .into_iter()
        .map(|(id, group)| {
            let params = estimates.get(&id).ok_or_else(|| Error::MissingEstimate(id.clone()))?;
            let y: Vec<bool> = group.iter().map(|c| c.y).collect();
            let observed: Vec<f64> = group.iter().map(|c| if c.d { 1.0 } else { 0.0 }).collect();
            let simulated: Vec<f64> = match mode {
                MomentMode::Expected => group.iter().map(|c| model::choice_probability(c.tau(), c.y, params)).collect(),
                MomentMode::Realized => {
                    let mut rng = stream_rng(keyed_seed(seed, &format!("moments:{id}")), 0);
                    group
                        .iter()
                        .map(|c| if simulate_decision(&mut rng, c.tau(), c.y, params) { 1.0 } else { 0.0 })
                        .collect()
                }
            };
            Ok(MomentPair {
                observed: FitMoments::from_probabilities(&y, &observed),
                simulated: FitMoments::from_probabilities(&y, &simulated),
                physician_id: id,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the small-sample correction to
/// the asymptotic distribution.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("KS test needs two nonempty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok(KsTest { statistic: d, p_value: kolmogorov_sf(lambda) })
}

/// KS test per moment family, observed against simulated across physicians.
pub fn moment_ks_tests(pairs: &[MomentPair]) -> Result<[KsTest; 3]> {
    let mut out = [KsTest { statistic: 0.0, p_value: 1.0 }; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let obs: Vec<f64> = pairs.iter().map(|p| p.observed.family(k)).collect();
        let sim: Vec<f64> = pairs.iter().map(|p| p.simulated.family(k)).collect();
        *slot = ks_two_sample(&obs, &sim)?;
    }
    Ok(out)
}
