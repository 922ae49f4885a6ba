//! Minimization of `J = I + βH + γC` at fixed multipliers.

use crate::domain::Grid;
use crate::error::{Error, Result};
use crate::functionals::Topography;
use crate::prior::PriorModel;

use super::krylov::conjugate_gradient;
use super::{Ensemble, EquilibriumState, Problem, SolveStatus, SolverOptions};

/// Drop of `J` below its starting value that is taken as unboundedness.
const UNBOUNDED_DROP: f64 = 1e12;

impl Problem<'_> {
    fn canonical_objective(&self, q: &[f64], psi: &[f64], beta: f64, gamma: f64) -> Option<f64> {
        let i = self.information(q)?;
        Some(i + beta * self.energy(q, psi) + gamma * self.circulation(q))
    }
}

/// Canonical equilibrium at inverse temperature `β` and chemical potential `γ`.
///
/// Runs the damped fixed-point map `q ← q + ω(f'(−βψ − γ) − q)` under an Armijo
/// test on `J`, and switches to Newton–CG steps once the map contracts slowly.
/// The result carries [`SolveStatus::Unbounded`] when `J` falls without bound,
/// in which case no canonical minimizer exists at `(β, γ)`.
pub fn solve_canonical(
    grid: &Grid,
    prior: &PriorModel,
    topo: &Topography,
    beta: f64,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<EquilibriumState> {
    opts.validate()?;
    if !(beta.is_finite() && gamma.is_finite()) {
        return Err(Error::InvalidArgument("multipliers must be finite".into()));
    }
    let p = Problem::new(grid, prior, topo)?;
    let n = grid.len();
    let h = p.h();

    let mut q = match &opts.warm_start {
        Some(w) => {
            grid.check(&w.q)?;
            w.q.values().to_vec()
        }
        None => vec![prior.mean_field(-gamma).unwrap_or(prior.mean()); n],
    };
    if p.information(&q).is_none() {
        q = vec![prior.mean(); n];
    }
    let mut psi = p.psi(&q);
    let mut j = p
        .canonical_objective(&q, &psi, beta, gamma)
        .ok_or_else(|| Error::InvalidArgument("prior mean lies outside its own support".into()))?;
    let j_start = j;
    let mut residual = p.residual(&q, &psi, beta, gamma);
    let mut use_newton = false;
    let mut status = SolveStatus::MaxIterations;

    let mut k = 0;
    while k < opts.max_outer_iters {
        if residual <= opts.residual_tol {
            status = SolveStatus::Converged;
            break;
        }
        k += 1;
        let Some((d1, d2)) = p.rate_derivs(&q) else {
            status = SolveStatus::Stalled;
            break;
        };
        let grad: Vec<f64> = (0..n).map(|i| d1[i] + beta * psi[i] + gamma).collect();

        let fixed_point: Vec<f64> = (0..n)
            .map(|i| match prior.mean_field(-beta * psi[i] - gamma) {
                Some(m) => m - q[i],
                None => -grad[i] / d2[i],
            })
            .collect();

        let mut candidates: Vec<(Vec<f64>, f64)> = Vec::with_capacity(2);
        if use_newton {
            let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
            let cg = conjugate_gradient(
                |v| {
                    let gv = p.green(v);
                    (0..n).map(|i| d2[i] * v[i] + beta * gv[i]).collect()
                },
                &rhs,
                1e-12,
                4 * n + 50,
            );
            if !cg.negative_curvature && cg.x.iter().any(|v| *v != 0.0) {
                candidates.push((cg.x, 1.0));
            }
        }
        candidates.push((fixed_point, opts.damping));

        let mut stepped = false;
        for (dir, t0) in candidates {
            let slope = h * dir.iter().zip(&grad).map(|(d, g)| d * g).sum::<f64>();
            if !(slope < 0.0) {
                continue;
            }
            let mut t = t0;
            for _ in 0..50 {
                let trial: Vec<f64> = q.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                let tpsi = p.psi(&trial);
                if let Some(jt) = p.canonical_objective(&trial, &tpsi, beta, gamma) {
                    if jt <= j + 1e-4 * t * slope + 1e-14 * (1.0 + j.abs()) {
                        q = trial;
                        psi = tpsi;
                        j = jt;
                        stepped = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if stepped {
                break;
            }
        }
        if !stepped {
            residual = p.residual(&q, &psi, beta, gamma);
            status = if residual <= opts.residual_tol {
                SolveStatus::Converged
            } else {
                SolveStatus::Stalled
            };
            break;
        }
        if j_start - j > UNBOUNDED_DROP {
            status = SolveStatus::Unbounded;
            break;
        }
        let next = p.residual(&q, &psi, beta, gamma);
        if !(next <= 0.5 * residual) {
            use_newton = true;
        }
        residual = next;
    }
    if status == SolveStatus::MaxIterations && residual <= opts.residual_tol {
        status = SolveStatus::Converged;
    }

    Ok(p.state(
        Ensemble::Canonical,
        q,
        psi,
        beta,
        gamma,
        k,
        status,
        Vec::new(),
    ))
}
