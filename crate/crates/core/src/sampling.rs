//! Seeded draw machinery: modified Latin hypercube uniforms, truncated-normal
//! inversion and the per-patient standardized draws used by the simulator.
//!
//! Every stream comes from ChaCha8, a counter-based generator: the 64-bit seed
//! fills the key and the unit index selects the stream, so the draws of one
//! patient never depend on how many other patients were processed before it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::model::{PatientCase, PhysicianParams};
use crate::normal;

/// Column of the sickness-index channel.
pub const NU: usize = 0;
/// Column of the type-signal channel.
pub const XI: usize = 1;
/// Column of the clinical-signal channel.
pub const ETA: usize = 2;

/// ChaCha8 stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a per-unit seed from a base seed and an opaque label (e.g. a
/// physician id). Stable across platforms and runs.
pub fn keyed_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Column-major matrix of `r_count x n_columns` stratified uniforms.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSet {
    pub seed: u64,
    pub unit_index: u64,
    pub r_count: usize,
    pub n_columns: usize,
    draws: Vec<f64>,
}

impl DrawSet {
    pub fn column(&self, c: usize) -> &[f64] {
        &self.draws[c * self.r_count..(c + 1) * self.r_count]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.draws[c * self.r_count + r]
    }
}

/// Modified Latin hypercube sample: each column is `(r + U) / R` for
/// `r = 0..R` with one shared uniform shift `U`, then independently shuffled.
pub fn mlhs_draws(seed: u64, r_count: usize, n_columns: usize, unit_index: u64) -> DrawSet {
    assert!(r_count >= 1, "r_count must be at least 1");
    let mut rng = stream_rng(seed, unit_index);
    let below_one = 1.0 - f64::EPSILON / 2.0;
    let inv = 1.0 / r_count as f64;
    let mut draws = Vec::with_capacity(r_count * n_columns);
    for _ in 0..n_columns {
        let shift: f64 = rng.sample(rand_distr::Open01);
        let start = draws.len();
        draws.extend((0..r_count).map(|r| ((r as f64 + shift) * inv).min(below_one)));
        draws[start..].shuffle(&mut rng);
    }
    DrawSet {
        seed,
        unit_index,
        r_count,
        n_columns,
        draws,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Truncated to `(0, inf)`: the patient is sick.
    Above,
    /// Truncated to `(-inf, 0]`.
    Below,
}

impl Side {
    pub fn from_sickness(y: bool) -> Self {
        if y {
            Side::Above
        } else {
            Side::Below
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedVariate {
    pub value: f64,
    /// Set when the retained mass is within 1e-14 of 0 or 1, where the
    /// inversion loses relative accuracy.
    pub tail_warning: bool,
}

/// Inverse-CDF draw from `N(mean, 1)` truncated at zero.
pub fn truncated_normal_inverse(u: f64, mean: f64, side: Side) -> TruncatedVariate {
    let below_mass = normal::cdf(-mean);
    let tail_warning = below_mass < 1e-14 || below_mass > 1.0 - 1e-14;
    TruncatedVariate {
        value: normal::truncated_quantile(u, mean, side == Side::Above),
        tail_warning,
    }
}

/// One simulated realization for a patient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalDraw {
    pub nu: f64,
    pub xi: f64,
    pub eta: f64,
}

/// Parameter-free part of the simulated draws for one patient: the
/// sickness index conditioned on the observed `y`, and the standard-normal
/// innovations of both signals. Signals follow as
/// `xi = tau + sigma_xi * z_xi` and `eta = nu + sigma_eta * z_eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardDraws {
    pub nu: Vec<f64>,
    pub z_xi: Vec<f64>,
    pub z_eta: Vec<f64>,
    pub tail_warnings: usize,
}

impl StandardDraws {
    pub fn new(tau: f64, y: bool, draws: &DrawSet) -> Self {
        assert!(draws.n_columns >= 3, "draw set needs three columns");
        let side = Side::from_sickness(y);
        let mut tail_warnings = 0;
        let nu = draws
            .column(NU)
            .iter()
            .map(|&u| {
                let v = truncated_normal_inverse(u, tau, side);
                tail_warnings += usize::from(v.tail_warning);
                v.value
            })
            .collect();
        let z_xi = draws.column(XI).iter().map(|&u| normal::quantile(u)).collect();
        let z_eta = draws.column(ETA).iter().map(|&u| normal::quantile(u)).collect();
        Self {
            nu,
            z_xi,
            z_eta,
            tail_warnings,
        }
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }
}

/// The `R` simulated `(nu, xi, eta)` triples of one patient under `params`.
pub fn signal_draws(case: &PatientCase, params: &PhysicianParams, draws: &DrawSet) -> Vec<SignalDraw> {
    let std = StandardDraws::new(case.tau(), case.y, draws);
    (0..std.len())
        .map(|r| SignalDraw {
            nu: std.nu[r],
            xi: case.tau() + params.sigma_xi() * std.z_xi[r],
            eta: std.nu[r] + params.sigma_eta() * std.z_eta[r],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlhs_is_stratified() {
        let ds = mlhs_draws(7, 4, 3, 0);
        for c in 0..3 {
            let mut col = ds.column(c).to_vec();
            col.sort_by(f64::total_cmp);
            for (r, &u) in col.iter().enumerate() {
                assert!(u > r as f64 / 4.0 && u < (r + 1) as f64 / 4.0, "{col:?}");
            }
        }
    }

    #[test]
    fn mlhs_column_mean_within_half_stratum() {
        let r = 1000;
        let ds = mlhs_draws(99, r, 3, 5);
        for c in 0..3 {
            let mean = ds.column(c).iter().sum::<f64>() / r as f64;
            assert!((mean - 0.5).abs() <= 0.5 / r as f64 + 1e-12);
        }
    }

    #[test]
    fn mlhs_is_deterministic_and_unit_keyed() {
        assert_eq!(mlhs_draws(3, 50, 3, 9), mlhs_draws(3, 50, 3, 9));
        assert_ne!(mlhs_draws(3, 50, 3, 9).draws, mlhs_draws(3, 50, 3, 10).draws);
        assert_ne!(mlhs_draws(3, 50, 3, 9).draws, mlhs_draws(4, 50, 3, 9).draws);
        let ds = mlhs_draws(3, 50, 3, 9);
        assert_ne!(ds.column(0), ds.column(1));
    }

    #[test]
    fn keyed_seed_is_stable() {
        assert_eq!(keyed_seed(1, "phys0001"), keyed_seed(1, "phys0001"));
        assert_ne!(keyed_seed(1, "phys0001"), keyed_seed(1, "phys0002"));
        assert_ne!(keyed_seed(1, "phys0001"), keyed_seed(2, "phys0001"));
    }

    #[test]
    fn truncated_inverse_examples() {
        let v = truncated_normal_inverse(0.5, 0.0, Side::Above);
        assert!((v.value - normal::quantile(0.75)).abs() < 1e-12);
        assert!((v.value - 0.674_489_750_196_081_7).abs() < 1e-12);
        assert!(!v.tail_warning);
        for &u in &[0.1, 0.5, 0.9] {
            let v = truncated_normal_inverse(u, 8.0, Side::Above).value;
            assert!((v - (8.0 + normal::quantile(u))).abs() < 1e-9);
        }
        assert!(truncated_normal_inverse(1e-12, 0.0, Side::Above).value < 1e-10);
        assert!(truncated_normal_inverse(1e-12, 0.0, Side::Above).value > 0.0);
        assert!(truncated_normal_inverse(0.5, 9.0, Side::Below).tail_warning);
    }

    #[test]
    fn truncated_inverse_respects_support() {
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            for &m in &[-5.0, -1.0, 0.0, 2.0, 5.0] {
                assert!(truncated_normal_inverse(u, m, Side::Above).value > 0.0);
                assert!(truncated_normal_inverse(u, m, Side::Below).value <= 0.0);
            }
        }
    }

    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn truncated_variates_pass_ks() {
        let n = 100_000;
        let mut rng = stream_rng(5, 0);
        // 1% critical value of the one-sample KS statistic.
        let crit = 1.628 / (n as f64).sqrt();
        for &(mean, side) in &[(0.3, Side::Above), (-1.2, Side::Above), (0.8, Side::Below)] {
            let xs: Vec<f64> = (0..n)
                .map(|_| truncated_normal_inverse(rng.sample(rand_distr::Open01), mean, side).value)
                .collect();
            let cdf = |x: f64| match side {
                Side::Above => (normal::cdf(x - mean) - normal::cdf(-mean)) / normal::cdf(mean),
                Side::Below => normal::cdf(x - mean) / normal::cdf(-mean),
            };
            let d = ks_statistic(xs, cdf);
            assert!(d < crit, "mean {mean} {side:?}: D={d} crit={crit}");
        }
    }

    #[test]
    fn signal_draws_examples() {
        let case = PatientCase::new("a", "1", 0.3, true, false).unwrap();
        let ds = mlhs_draws(1, 200, 3, 0);
        let exact_type = PhysicianParams::new(0.5, 0.0, 1.0).unwrap();
        let draws = signal_draws(&case, &exact_type, &ds);
        assert!(draws.iter().all(|s| s.xi == case.tau()));
        assert!(draws.iter().all(|s| s.nu > 0.0));

        let well = PatientCase::new("a", "2", 0.3, false, false).unwrap();
        assert!(signal_draws(&well, &exact_type, &ds).iter().all(|s| s.nu <= 0.0));
    }

    #[test]
    fn signal_mean_converges_to_type() {
        let case = PatientCase::new("a", "1", 0.7, true, true).unwrap();
        let p = PhysicianParams::new(0.5, 2.0, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for &r in &[100, 1000, 10_000] {
            let err: f64 = (0..20)
                .map(|k| {
                    let draws = signal_draws(&case, &p, &mlhs_draws(17, r, 3, k));
                    let m = draws.iter().map(|s| s.xi).sum::<f64>() / r as f64;
                    (m - case.tau()).abs()
                })
                .sum::<f64>()
                / 20.0;
            // Stratification gives roughly O(1/R) error in the mean.
            assert!(err < 10.0 / r as f64, "R={r}: {err}");
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn draws_move_smoothly_with_parameters() {
        let case = PatientCase::new("a", "1", 0.4, false, false).unwrap();
        let ds = mlhs_draws(2, 100, 3, 3);
        let p1 = PhysicianParams::new(0.5, 1.0, 1.0).unwrap();
        let p2 = PhysicianParams::new(0.5, 1.0 + 1e-9, 1.0 + 1e-9).unwrap();
        let a = signal_draws(&case, &p1, &ds);
        let b = signal_draws(&case, &p2, &ds);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.nu, y.nu);
            assert!((x.xi - y.xi).abs() < 1e-7 && (x.eta - y.eta).abs() < 1e-7);
        }
    }
}
