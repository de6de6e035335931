//! Box-constrained BFGS with a backtracking (Armijo) line search.
//!
//! Variables at a bound whose gradient points outward are held fixed for the
//! step; convergence is judged on the projected gradient.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Infinity-norm tolerance on the projected gradient of the mean
    /// negative log-likelihood.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Jittered restarts in addition to the default starting point.
    pub restarts: usize,
    /// Standard deviation of the restart jitter on the transformed scale.
    pub jitter: f64,
    /// Largest step (infinity norm) tried by the line search.
    pub max_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 500,
            restarts: 4,
            jitter: 0.5,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box `[lower, upper]` starting at `x0`.
///
/// `f` returns the objective and its gradient.
pub fn minimize<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], cfg: &OptimizerConfig) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let clamp = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let identity = |h: &mut Vec<f64>| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
    };

    let mut x = x0.to_vec();
    clamp(&mut x);
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut h = vec![0.0; n * n];
    identity(&mut h);
    let mut fresh_h = true;
    let mut iterations = 0;

    loop {
        let pg = projected_gradient(&x, &g, lower, upper);
        let pg_norm = inf_norm(&pg);
        if pg_norm < cfg.grad_tol || !fx.is_finite() {
            return Minimum {
                converged: pg_norm < cfg.grad_tol && fx.is_finite(),
                x,
                value: fx,
                gradient: g,
                projected_grad_norm: pg_norm,
                iterations,
                evaluations,
            };
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;

        let active: Vec<bool> = (0..n).map(|i| pg[i] == 0.0 && g[i] != 0.0).collect();
        let mut p: Vec<f64> = (0..n)
            .map(|i| {
                if active[i] {
                    0.0
                } else {
                    -(0..n).filter(|&j| !active[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>()
                }
            })
            .collect();
        if dot(&p, &g) >= 0.0 {
            identity(&mut h);
            fresh_h = true;
            p = pg.iter().map(|v| -v).collect();
        }
        let step_norm = inf_norm(&p);
        if step_norm > cfg.max_step {
            p.iter_mut().for_each(|v| *v *= cfg.max_step / step_norm);
        }

        // Backtracking on the projected path.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let mut trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + alpha * pi).collect();
            clamp(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if inf_norm(&moved) == 0.0 {
                break;
            }
            let (ft, gt) = f(&trial);
            evaluations += 1;
            if ft.is_finite() && ft <= fx + 1e-4 * dot(&g, &moved) {
                accepted = Some((trial, ft, gt, moved));
                break;
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new, g_new, s)) = accepted else {
            if fresh_h {
                break;
            }
            identity(&mut h);
            fresh_h = true;
            continue;
        };

        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            if fresh_h {
                // Scale the initial inverse Hessian before the first update.
                let scale = sy / dot(&yv, &yv);
                h.iter_mut().for_each(|v| *v *= scale);
            }
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * yv[j]).sum()).collect();
            let yhy = dot(&yv, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
            fresh_h = false;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }

    let pg_norm = inf_norm(&projected_gradient(&x, &g, lower, upper));
    Minimum {
        converged: pg_norm < cfg.grad_tol,
        x,
        value: fx,
        gradient: g,
        projected_grad_norm: pg_norm,
        iterations,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    }

    #[test]
    fn solves_rosenbrock() {
        let cfg = OptimizerConfig {
            max_step: 10.0,
            ..Default::default()
        };
        let m = minimize(rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &cfg);
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn respects_active_bounds() {
        // Unconstrained minimum at (3, -2); the box cuts both coordinates.
        let f = |x: &[f64]| {
            let v = (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 2.0).powi(2) + 0.5 * x[0] * x[1];
            (v, vec![2.0 * (x[0] - 3.0) + 0.5 * x[1], 4.0 * (x[1] + 2.0) + 0.5 * x[0]])
        };
        let m = minimize(f, &[0.0, 0.0], &[-1.0, -1.0], &[1.0, 1.0], &OptimizerConfig::default());
        assert!(m.converged, "{m:?}");
        assert_eq!(m.x[0], 1.0);
        assert_eq!(m.x[1], -1.0);
    }

    #[test]
    fn reports_non_convergence_when_out_of_iterations() {
        let cfg = OptimizerConfig {
            max_iter: 2,
            ..Default::default()
        };
        let m = minimize(rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &cfg);
        assert!(!m.converged);
        assert!(m.projected_grad_norm >= cfg.grad_tol);
        assert_eq!(m.iterations, 2);
    }
}
