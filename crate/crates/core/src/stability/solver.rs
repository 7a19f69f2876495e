//! Augmented-Lagrangian solver with a damped Gauss-Newton inner loop.
//!
//! Equalities `h(z) = 0` and inequalities `g(z) <= 0` are folded into a sum
//! of squares
//!
//! ```text
//! |x - x_bar|^2 + (rho/2) |h + lambda/rho|^2 + (rho/2) |max(0, g + mu/rho)|^2
//! ```
//!
//! which is minimized by Gauss-Newton steps with Levenberg-Marquardt damping. Multipliers are
//! updated as `lambda += rho h`, `mu = max(0, mu + rho g)` and `rho` grows
//! tenfold whenever the constraint violation fails to halve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::nlp::Problem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub eq_tol: f64,
    pub ineq_tol: f64,
    pub grad_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho_init: f64,
    pub rho_growth: f64,
    /// Attempts whose penalty would grow past this value are abandoned.
    pub rho_max: f64,
    /// Weight of the squared contact forces (in units of object weight) in the
    /// objective; picks the least-effort force split when several balance.
    pub force_weight: f64,
    /// Once within tolerance, iterations continue until the violation drops
    /// by this factor; the last within-tolerance iterate is kept if they stall.
    pub polish: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eq_tol: 1e-4,
            ineq_tol: 1e-4,
            grad_tol: 1e-6,
            max_outer: 20,
            max_inner: 200,
            rho_init: 10.0,
            rho_growth: 10.0,
            rho_max: 1e12,
            force_weight: 1e-6,
            polish: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SolveOutcome {
    pub z: Vec<f64>,
    pub converged: bool,
    pub eq_norm: f64,
    pub ineq_max: f64,
    pub outer_iterations: usize,
}

struct Merit<'p, 'a> {
    problem: &'p Problem<'a>,
    target: &'p [f64],
    lambda: &'p [f64],
    mu: &'p [f64],
    rho: f64,
    /// Decision variables are `scale * z_scaled`.
    scale: &'p [f64],
    /// Indices of the force variables.
    forces: &'p [usize],
    force_weight: f64,
    /// Leading decision variables held fixed.
    frozen: usize,
}

impl Merit<'_, '_> {
    fn unscale(&self, zs: &[f64]) -> Vec<f64> {
        zs.iter().zip(self.scale).map(|(v, s)| v * s).collect()
    }

    fn residual(&self, zs: &[f64], with_jacobian: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let z = &self.unscale(zs)[..];
        let nc = self.target.len();
        let s = (0.5 * self.rho).sqrt();
        let inv = 1.0 / self.rho;
        let w = self.force_weight.sqrt();
        if !with_jacobian {
            let (eq, ineq) = self.problem.values(z);
            let r = (0..nc)
                .map(|i| z[i] - self.target[i])
                .chain(eq.iter().zip(self.lambda).map(|(h, l)| s * (h + l * inv)))
                .chain(ineq.iter().zip(self.mu).map(|(g, m)| s * (g + m * inv).max(0.0)))
                .chain(self.forces.iter().map(|&k| w * zs[k]))
                .collect::<Vec<_>>();
            return (DVector::from_vec(r), None);
        }
        let ev = self.problem.evaluate(z);
        let n = z.len();
        let rows = nc + ev.eq.len() + ev.ineq.len() + self.forces.len();
        let mut r = DVector::zeros(rows);
        let mut j = DMatrix::zeros(rows, n);
        for i in 0..nc {
            r[i] = z[i] - self.target[i];
            j[(i, i)] = 1.0;
        }
        for (k, (h, l)) in ev.eq.iter().zip(self.lambda).enumerate() {
            r[nc + k] = s * (h + l * inv);
            j.row_mut(nc + k).copy_from(&(ev.jeq.row(k) * s));
        }
        let off = nc + ev.eq.len();
        for (k, (g, m)) in ev.ineq.iter().zip(self.mu).enumerate() {
            let v = g + m * inv;
            if v > 0.0 {
                r[off + k] = s * v;
                j.row_mut(off + k).copy_from(&(ev.jineq.row(k) * s));
            }
        }
        let off = off + ev.ineq.len();
        for (i, &k) in self.forces.iter().enumerate() {
            r[off + i] = w * zs[k];
            j[(off + i, k)] = w / self.scale[k];
        }
        j.columns_mut(0, self.frozen).fill(0.0);
        for (k, sc) in self.scale.iter().enumerate() {
            if *sc != 1.0 {
                j.column_mut(k).scale_mut(*sc);
            }
        }
        (r, Some(j))
    }
}

/// Minimizes the merit from `z` in place with Levenberg-Marquardt damped
/// Gauss-Newton steps; returns the final stationarity and the iteration count.
fn levenberg_marquardt(merit: &Merit, z: &mut Vec<f64>, settings: &SolverSettings) -> (f64, usize) {
    let n = z.len();
    let (mut r, j) = merit.residual(z, true);
    let mut j = j.expect("jacobian requested");
    let mut stationarity = f64::INFINITY;
    let mut damping = f64::NAN;
    let mut nu = 2.0;
    let mut iterations = 0;
    while iterations < settings.max_inner {
        iterations += 1;
        let grad = j.transpose() * &r;
        stationarity = 2.0 * grad.amax();
        if stationarity <= settings.grad_tol * merit.rho.max(1.0) {
            break;
        }
        let jtj = j.transpose() * &j;
        if damping.is_nan() {
            damping = 1e-3 * jtj.diagonal().amax().max(1e-12);
        }
        let mut shifted = jtj.clone();
        for i in 0..n {
            shifted[(i, i)] += damping;
        }
        let Some(chol) = shifted.cholesky() else {
            damping *= nu;
            nu *= 2.0;
            continue;
        };
        let dir = chol.solve(&-&grad);
        let predicted = -(grad.dot(&dir) + 0.5 * dir.dot(&(&jtj * &dir)));
        let trial: Vec<f64> = z.iter().zip(dir.iter()).map(|(a, d)| a + d).collect();
        let (rt, _) = merit.residual(&trial, false);
        let actual = 0.5 * (r.norm_squared() - rt.norm_squared());
        let size = 1.0 + z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if actual > 0.0 && predicted > 0.0 {
            let gain = actual / predicted;
            *z = trial;
            let (rn, jn) = merit.residual(z, true);
            r = rn;
            j = jn.expect("jacobian requested");
            damping *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            if dir.amax() <= 1e-14 * size {
                break;
            }
        } else {
            damping *= nu;
            nu *= 2.0;
            if dir.amax() <= 1e-14 * size || !damping.is_finite() {
                break;
            }
        }
    }
    (stationarity, iterations)
}

/// Solves the program starting from `z0`; the first `target.len()` entries of
/// the decision vector are pulled towards `target` and the first `frozen`
/// entries keep their starting values.
pub(crate) fn solve(
    problem: &Problem,
    z0: Vec<f64>,
    target: &[f64],
    frozen: usize,
    settings: &SolverSettings,
) -> SolveOutcome {
    let layout = &problem.layout;
    let mut scale = vec![1.0; layout.n];
    let forces: Vec<usize> =
        (0..problem.assignment.contacts.len()).flat_map(|c| layout.force(c)..layout.force(c) + 3).collect();
    for (c, (a, _)) in problem.assignment.contacts.iter().enumerate() {
        let weight = match a {
            crate::physics::BodyId::Object(o) => problem.scene.objects[*o].mass * problem.scene.gravity,
            _ => 1.0,
        };
        let at = layout.force(c);
        scale[at..at + 3].iter_mut().for_each(|s| *s = weight.max(1e-6));
    }
    let (eq0, ineq0) = problem.values(&z0);
    let mut z: Vec<f64> = z0.iter().zip(&scale).map(|(v, s)| v / s).collect();
    let mut lambda = vec![0.0; eq0.len()];
    let mut mu = vec![0.0; ineq0.len()];
    let mut rho = settings.rho_init;
    let mut prev_violation = f64::INFINITY;
    let measure = |eq: &[f64], ineq: &[f64]| {
        let eq_norm = eq.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ineq_max = ineq.iter().fold(0.0f64, |m, v| m.max(*v));
        (eq_norm, ineq_max)
    };
    let (mut eq_norm, mut ineq_max) = measure(&eq0, &ineq0);
    let mut feasible: Option<SolveOutcome> = None;
    for outer in 0..settings.max_outer {
        let merit = Merit {
            problem,
            target,
            lambda: &lambda,
            mu: &mu,
            rho,
            scale: &scale,
            forces: &forces,
            force_weight: settings.force_weight,
            frozen,
        };
        let (stationarity, inner) = levenberg_marquardt(&merit, &mut z, settings);
        let (eq, ineq) = problem.values(&merit.unscale(&z));
        (eq_norm, ineq_max) = measure(&eq, &ineq);
        log::trace!(
            "outer {outer}: rho {rho:.1e} inner {inner} stationarity {stationarity:.2e} eq {eq_norm:.2e} ineq {ineq_max:.2e}"
        );
        if !z.iter().all(|v| v.is_finite()) {
            break;
        }
        if eq_norm <= settings.eq_tol && ineq_max <= settings.ineq_tol {
            let done = SolveOutcome {
                z: merit.unscale(&z),
                converged: true,
                eq_norm,
                ineq_max,
                outer_iterations: outer + 1,
            };
            let polished = eq_norm <= settings.polish * settings.eq_tol
                && ineq_max <= settings.polish * settings.ineq_tol;
            if polished {
                return done;
            }
            feasible = Some(done);
        }
        for (l, h) in lambda.iter_mut().zip(&eq) {
            *l += rho * h;
        }
        for (m, g) in mu.iter_mut().zip(&ineq) {
            *m = (*m + rho * g).max(0.0);
        }
        let violation = eq_norm.max(ineq_max);
        if violation > 0.5 * prev_violation {
            rho *= settings.rho_growth;
            if rho > settings.rho_max {
                if let Some(done) = feasible {
                    return done;
                }
                return SolveOutcome {
                    z: z.iter().zip(&scale).map(|(v, s)| v * s).collect(),
                    converged: false,
                    eq_norm,
                    ineq_max,
                    outer_iterations: outer + 1,
                };
            }
        }
        prev_violation = violation;
    }
    if let Some(done) = feasible {
        return done;
    }
    let z = z.iter().zip(&scale).map(|(v, s)| v * s).collect();
    SolveOutcome { z, converged: false, eq_norm, ineq_max, outer_iterations: settings.max_outer }
}
