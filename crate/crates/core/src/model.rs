//! Closed-form pieces of the treatment choice model.
//!
//! A patient's sickness index is `nu ~ N(tau, 1)` and the patient is sick when
//! `nu > 0`. The physician sees a type signal `xi ~ N(tau, sigma_xi^2)` and a
//! clinical signal `eta ~ N(nu, sigma_eta^2)`, forms a normal posterior over
//! `nu`, and prescribes when the posterior probability of sickness exceeds the
//! preference weight `beta` (the untreated-sickness cost is normalized to one).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::gauss_legendre;

/// Lower clamp applied to predicted risks before the probit transform.
pub const RISK_FLOOR: f64 = 1e-6;
/// Upper clamp applied to predicted risks before the probit transform.
pub const RISK_CEIL: f64 = 1.0 - 1e-6;

/// Skill and preference parameters of one physician.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct PhysicianParams {
    beta: f64,
    sigma_xi: f64,
    sigma_eta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    beta: f64,
    sigma_xi: f64,
    sigma_eta: f64,
}

impl TryFrom<RawParams> for PhysicianParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        PhysicianParams::new(raw.beta, raw.sigma_xi, raw.sigma_eta)
    }
}

impl From<PhysicianParams> for RawParams {
    fn from(p: PhysicianParams) -> Self {
        RawParams {
            beta: p.beta,
            sigma_xi: p.sigma_xi,
            sigma_eta: p.sigma_eta,
        }
    }
}

impl PhysicianParams {
    /// Requires `0 < beta < 1`, `sigma_xi >= 0` and `sigma_eta > 0`.
    pub fn new(beta: f64, sigma_xi: f64, sigma_eta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParams(format!("beta must lie in (0, 1), got {beta}")));
        }
        if !(sigma_xi >= 0.0 && sigma_xi.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "sigma_xi must be finite and >= 0, got {sigma_xi}"
            )));
        }
        if !(sigma_eta > 0.0 && sigma_eta.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "sigma_eta must be finite and > 0, got {sigma_eta}"
            )));
        }
        Ok(Self {
            beta,
            sigma_xi,
            sigma_eta,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma_xi(&self) -> f64 {
        self.sigma_xi
    }

    pub fn sigma_eta(&self) -> f64 {
        self.sigma_eta
    }

    /// Same skill, different preference weight.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(beta, self.sigma_xi, self.sigma_eta)
    }

    pub fn with_sigma_xi(&self, sigma_xi: f64) -> Result<Self> {
        Self::new(self.beta, sigma_xi, self.sigma_eta)
    }

    /// Posterior standard deviation of the sickness index given both signals.
    pub fn posterior_sd(&self) -> f64 {
        let a = self.sigma_xi * self.sigma_xi + 1.0;
        let b = self.sigma_eta * self.sigma_eta;
        (a * b / (a + b)).sqrt()
    }
}

/// One consultation: predicted risk, realized sickness and observed decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientCase {
    pub physician_id: String,
    pub patient_id: String,
    risk: f64,
    tau: f64,
    pub y: bool,
    pub d: bool,
}

impl PatientCase {
    /// `risk` must already be inside (0, 1); see [`clamp_risk`].
    pub fn new(
        physician_id: impl Into<String>,
        patient_id: impl Into<String>,
        risk: f64,
        y: bool,
        d: bool,
    ) -> Result<Self> {
        let tau = risk_to_type(risk)?;
        Ok(Self {
            physician_id: physician_id.into(),
            patient_id: patient_id.into(),
            risk,
            tau,
            y,
            d,
        })
    }

    pub fn risk(&self) -> f64 {
        self.risk
    }

    /// Latent type, `Φ⁻¹(risk)`.
    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Clamps a raw predicted risk into `[RISK_FLOOR, RISK_CEIL]`; the flag reports
/// whether the value moved.
pub fn clamp_risk(risk: f64) -> (f64, bool) {
    let clamped = risk.clamp(RISK_FLOOR, RISK_CEIL);
    (clamped, clamped != risk)
}

/// Latent patient type from a predicted risk: `tau = Φ⁻¹(risk)`.
pub fn risk_to_type(risk: f64) -> Result<f64> {
    if !(risk > 0.0 && risk < 1.0) {
        return Err(Error::Domain(format!("risk must lie in (0, 1), got {risk}")));
    }
    Ok(normal::quantile(risk))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mu: f64,
    pub sigma: f64,
}

/// Normal posterior of the sickness index given a type and a clinical signal.
pub fn posterior(xi: f64, eta: f64, params: &PhysicianParams) -> Posterior {
    let a = params.sigma_xi * params.sigma_xi + 1.0;
    let b = params.sigma_eta * params.sigma_eta;
    let denom = a + b;
    Posterior {
        mu: (xi * b + eta * a) / denom,
        sigma: (a * b / denom).sqrt(),
    }
}

/// Posterior-mean threshold above which the physician prescribes.
pub fn cutoff(params: &PhysicianParams) -> f64 {
    -params.posterior_sd() * normal::quantile(1.0 - params.beta)
}

/// Prescription rule. Ties at the cutoff resolve to "do not prescribe".
pub fn decide(xi: f64, eta: f64, params: &PhysicianParams) -> bool {
    posterior(xi, eta, params).mu > cutoff(params)
}

/// The rescaled decision index `g(xi, eta)`; the physician prescribes iff it is positive.
pub fn decision_index(xi: f64, eta: f64, params: &PhysicianParams) -> f64 {
    let a = params.sigma_xi * params.sigma_xi + 1.0;
    let b = params.sigma_eta * params.sigma_eta;
    xi * b + eta * a + ((a + b) * a * b).sqrt() * normal::quantile(1.0 - params.beta)
}

/// Physician payoff for one consultation with `alpha = 1`.
pub fn payoff(d: bool, y: bool, beta: f64) -> f64 {
    let d = f64::from(u8::from(d));
    let y = f64::from(u8::from(y));
    -y * (1.0 - d) - beta * d
}

/// Same as [`payoff`] for a fractional (expected) decision.
pub fn expected_payoff(p_prescribe: f64, y: bool, beta: f64) -> f64 {
    let y = f64::from(u8::from(y));
    -y * (1.0 - p_prescribe) - beta * p_prescribe
}

/// Result of the quadrature choice probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactProbability {
    pub value: f64,
    /// False when the rule of order `n` and `2n` differ by more than 1e-6.
    pub converged: bool,
}

pub const DEFAULT_QUADRATURE_ORDER: usize = 24;

/// Conditional on the sickness index `nu`, the decision is a threshold on a
/// normal linear combination of the two signals, so
/// `P(d = 1 | nu) = Φ((nu - t) / w)`. Returns `(t, w)`.
fn conditional_threshold(tau: f64, params: &PhysicianParams) -> (f64, f64) {
    let sx2 = params.sigma_xi * params.sigma_xi;
    let a = sx2 + 1.0;
    let b = params.sigma_eta * params.sigma_eta;
    let c = normal::quantile(params.beta);
    let root_m = (a * b * (a + b)).sqrt();
    let s = (b * b * sx2 + a * a * b).sqrt();
    ((c * root_m - tau * b) / a, s / a)
}

/// Probability of prescribing to a patient of type `tau` with sickness `y`,
/// integrating the conditional probability over the truncated sickness index.
///
/// The integral over the sickness index uses composite Gauss–Legendre panels
/// with extra breakpoints around the point where the conditional probability
/// crosses one half, so near-deterministic decisions stay accurate.
pub fn choice_probability_exact(
    tau: f64,
    y: bool,
    params: &PhysicianParams,
    quadrature_order: usize,
) -> Result<ExactProbability> {
    if quadrature_order < 16 {
        return Err(Error::Domain(format!(
            "quadrature order must be at least 16, got {quadrature_order}"
        )));
    }
    let (t, w) = conditional_threshold(tau, params);
    let coarse = integrate_truncated(tau, y, t, w, quadrature_order);
    let fine = integrate_truncated(tau, y, t, w, 2 * quadrature_order);
    Ok(ExactProbability {
        value: fine.clamp(0.0, 1.0),
        converged: (fine - coarse).abs() <= 1e-6,
    })
}

/// Single-order evaluation for inner loops (no convergence check).
pub fn choice_probability(tau: f64, y: bool, params: &PhysicianParams) -> f64 {
    let (t, w) = conditional_threshold(tau, params);
    integrate_truncated(tau, y, t, w, 2 * DEFAULT_QUADRATURE_ORDER).clamp(0.0, 1.0)
}

/// Probability of prescribing before sickness is realized, in closed form.
pub fn choice_probability_unconditional(tau: f64, params: &PhysicianParams) -> f64 {
    let (t, w) = conditional_threshold(tau, params);
    normal::cdf((tau - t) / (1.0 + w * w).sqrt())
}

fn integrate_truncated(tau: f64, y: bool, t: f64, w: f64, order: usize) -> f64 {
    // Work in z = nu - tau; the retained side of the standard normal is cut
    // where its remaining relative mass is below e^-48.
    let (lo, hi) = if y {
        let lo = (-tau).max(-10.0);
        (lo, (lo + 8.0).max(10.0))
    } else {
        let hi = (-tau).min(10.0);
        ((hi - 8.0).min(-10.0), hi)
    };
    let mass = if y { normal::cdf(tau) } else { normal::cdf(-tau) };

    // Breakpoints around the point where P(d = 1 | nu) crosses one half, then
    // panels no wider than 2.
    let zt = t - tau;
    let mut breaks = vec![lo, hi];
    for k in [-8.0, -1.0, 0.0, 1.0, 8.0] {
        let b = zt + k * w;
        if b > lo && b < hi {
            breaks.push(b);
        }
    }
    breaks.sort_by(f64::total_cmp);

    let rule = gauss_legendre(order);
    let integrand = |z: f64| normal::pdf(z) * normal::cdf((z - zt) / w);
    let mut total = 0.0;
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let panels = ((b - a) / 2.0).ceil().max(1.0) as usize;
        let h = (b - a) / panels as f64;
        for k in 0..panels {
            let start = a + k as f64 * h;
            total += rule.integrate(start, start + h, integrand);
        }
    }
    total / mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(beta: f64, sx: f64, se: f64) -> PhysicianParams {
        PhysicianParams::new(beta, sx, se).unwrap()
    }

    fn bisect_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-20.0_f64, 20.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal::cdf(mid) < p {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn params_validation() {
        assert!(PhysicianParams::new(0.0, 1.0, 1.0).is_err());
        assert!(PhysicianParams::new(1.0, 1.0, 1.0).is_err());
        assert!(PhysicianParams::new(0.5, -1.0, 1.0).is_err());
        assert!(PhysicianParams::new(0.5, 1.0, 0.0).is_err());
        assert!(PhysicianParams::new(0.5, 0.0, 1.0).is_ok());
        let json = r#"{"beta":1.5,"sigma_xi":1.0,"sigma_eta":1.0}"#;
        assert!(serde_json::from_str::<PhysicianParams>(json).is_err());
    }

    #[test]
    fn risk_to_type_examples() {
        assert_eq!(risk_to_type(0.5).unwrap(), 0.0);
        assert!((risk_to_type(0.841_344_7).unwrap() - 1.0).abs() < 1e-6);
        let oracle = bisect_quantile(0.3);
        assert!((risk_to_type(0.3).unwrap() - oracle).abs() < 1e-10);
        assert!((oracle + 0.5244).abs() < 1e-4);
        assert!(risk_to_type(0.0).is_err());
        assert!(risk_to_type(1.0).is_err());
    }

    #[test]
    fn risk_round_trip_after_clamp() {
        for &r in &[0.0, 1e-9, 1e-6, 0.01, 0.4, 0.99, 1.0 - 1e-7, 1.0] {
            let (c, _) = clamp_risk(r);
            let tau = risk_to_type(c).unwrap();
            assert!((normal::cdf(tau) - c).abs() < 1e-12, "risk {r}");
        }
        assert_eq!(clamp_risk(1.0), (RISK_CEIL, true));
        assert_eq!(clamp_risk(0.3), (0.3, false));
    }

    #[test]
    fn posterior_examples() {
        let p = posterior(0.0, 2.0, &params(0.5, 0.0, 1.0));
        assert!((p.mu - 1.0).abs() < 1e-15);
        assert!((p.sigma - 0.5f64.sqrt()).abs() < 1e-15);
        // Equal signals leave the mean at the signal value.
        let p = posterior(0.7, 0.7, &params(0.3, 3.0, 0.4));
        assert!((p.mu - 0.7).abs() < 1e-15);
        // xi=1, eta=-1, sx=2, se=3: a=5, b=9 -> mu=(9-5)/14, var=45/14.
        let p = posterior(1.0, -1.0, &params(0.5, 2.0, 3.0));
        assert!((p.mu - 4.0 / 14.0).abs() < 1e-15);
        assert!((p.sigma - (45.0f64 / 14.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(cutoff(&params(0.5, 3.0, 2.0)), 0.0);
        assert!(cutoff(&params(1.0 - 1e-12, 3.0, 2.0)) > 10.0);
        // beta=0.56, sx=6.38, se=2.18: sigma^2 = a b / (a + b).
        let p = params(0.56, 6.38, 2.18);
        let a = 6.38f64 * 6.38 + 1.0;
        let b = 2.18f64 * 2.18;
        let sigma = (a * b / (a + b)).sqrt();
        let expected = -sigma * bisect_quantile(0.44);
        assert!((cutoff(&p) - expected).abs() < 1e-9);
        assert!(cutoff(&p) > 0.0);
    }

    #[test]
    fn decide_examples() {
        let p = params(0.5, 1.0, 1.0);
        assert!(decide(10.0, 10.0, &p));
        assert!(!decide(-10.0, -10.0, &p));
        // mu == cutoff == 0 is not a prescription.
        assert!(!decide(0.0, 0.0, &p));
    }

    #[test]
    fn payoff_examples() {
        assert_eq!(payoff(true, false, 0.56), -0.56);
        assert_eq!(payoff(false, true, 0.3), -1.0);
        assert_eq!(payoff(false, false, 0.9), 0.0);
        assert_eq!(payoff(true, true, 0.4), -0.4);
    }

    #[test]
    fn decision_index_agrees_with_cutoff_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let p = params(
                rng.random_range(0.01..0.99),
                rng.random_range(0.0..10.0),
                rng.random_range(0.05..10.0),
            );
            let xi = rng.random_range(-5.0..5.0);
            let eta = rng.random_range(-5.0..5.0);
            assert_eq!(decide(xi, eta, &p), decision_index(xi, eta, &p) > 0.0);
        }
    }

    #[test]
    fn higher_beta_never_creates_a_prescription() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5_000 {
            let sx = rng.random_range(0.0..8.0);
            let se = rng.random_range(0.1..6.0);
            let b1 = rng.random_range(0.01..0.98);
            let b2 = rng.random_range(b1..0.99);
            let xi = rng.random_range(-4.0..4.0);
            let eta = rng.random_range(-4.0..4.0);
            if !decide(xi, eta, &params(b1, sx, se)) {
                assert!(!decide(xi, eta, &params(b2, sx, se)));
            }
        }
    }

    #[test]
    fn posterior_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5_000 {
            let sx: f64 = rng.random_range(0.0..20.0);
            let se: f64 = rng.random_range(0.01..20.0);
            let s = posterior(0.0, 0.0, &params(0.5, sx, se)).sigma;
            assert!(s <= (sx * sx + 1.0).sqrt().min(se) * (1.0 + 1e-15));
        }
    }

    #[test]
    fn exact_probability_limits() {
        let noisy = params(0.5, 1e4, 1e4);
        let p = choice_probability_exact(0.0, true, &noisy, 16).unwrap();
        assert!((p.value - 0.5).abs() < 1e-3, "{p:?}");
        for &(tau, y) in &[(0.0, true), (2.0, true), (-1.0, false)] {
            let mut prev = 1.0;
            for &beta in &[0.5, 0.9, 0.999, 0.999_999, 1.0 - 1e-15] {
                let v = choice_probability_exact(tau, y, &params(beta, 1.0, 1.0), 16)
                    .unwrap()
                    .value;
                assert!(v <= prev);
                prev = v;
            }
            assert!(prev < 1e-3, "tau {tau}: {prev}");
        }
        assert!(choice_probability_exact(0.0, true, &noisy, 8).is_err());
    }

    #[test]
    fn exact_probability_matches_dense_monte_carlo() {
        // Secondary oracle: brute-force simulation of the decision rule.
        let p = params(0.56, 6.38, 2.18);
        let exact = choice_probability_exact(0.0, true, &p, 32).unwrap();
        assert!(exact.converged);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 4_000_000;
        let mut hits = 0u64;
        let mut kept = 0u64;
        while kept < n {
            let nu: f64 = rng.sample(rand_distr::StandardNormal);
            if nu <= 0.0 {
                continue;
            }
            kept += 1;
            let xi = 6.38 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let eta = nu + 2.18 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            hits += u64::from(decide(xi, eta, &p));
        }
        let mc = hits as f64 / n as f64;
        let se = (mc * (1.0 - mc) / n as f64).sqrt();
        assert!((exact.value - mc).abs() < 4.0 * se, "exact {} mc {mc}", exact.value);
    }

    #[test]
    fn exact_probability_is_sharp_at_low_noise() {
        // Near-perfect signals: prescribe exactly the sick.
        let p = params(0.5, 1e-3, 1e-3);
        for &tau in &[-2.0, -0.5, 0.0, 1.0] {
            let sick = choice_probability_exact(tau, true, &p, 16).unwrap();
            let well = choice_probability_exact(tau, false, &p, 16).unwrap();
            assert!(sick.value > 0.99, "tau {tau}: {sick:?}");
            assert!(well.value < 0.01, "tau {tau}: {well:?}");
        }
    }

    #[test]
    fn conditional_probabilities_average_to_unconditional() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let p = params(
                rng.random_range(0.05..0.95),
                rng.random_range(0.0..10.0),
                rng.random_range(0.3..5.0),
            );
            let tau = rng.random_range(-2.5..2.5);
            let p1 = choice_probability_exact(tau, true, &p, 32).unwrap().value;
            let p0 = choice_probability_exact(tau, false, &p, 32).unwrap().value;
            let mix = normal::cdf(tau) * p1 + normal::cdf(-tau) * p0;
            let closed = choice_probability_unconditional(tau, &p);
            assert!((mix - closed).abs() < 1e-7, "{mix} vs {closed}");
        }
    }

    #[test]
    fn unconditional_probability_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..2_000 {
            let beta = rng.random_range(0.05..0.9);
            let p = params(beta, rng.random_range(0.0..10.0), rng.random_range(0.1..5.0));
            let t1 = rng.random_range(-3.0..3.0);
            let t2 = t1 + rng.random_range(0.0..1.0);
            assert!(
                choice_probability_unconditional(t2, &p)
                    >= choice_probability_unconditional(t1, &p)
            );
            let higher = p.with_beta(beta + 0.05).unwrap();
            assert!(
                choice_probability_unconditional(t1, &higher)
                    <= choice_probability_unconditional(t1, &p)
            );
        }
    }
}
