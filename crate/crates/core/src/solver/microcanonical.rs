//! Minimization of `I` subject to `H = E`, `C = Γ`.
//!
//! Each outer step freezes `ψ̂ = ψ(q^{k−1})` and minimizes `I` subject to `C = Γ`
//! and the linearized energy `L(q) = H(q^{k−1}) + ⟨ψ̂, q − q^{k−1}⟩ = E`. The
//! subproblem solution is `f'(−βψ̂ − γ)`, with `(β, γ)` maximizing the concave dual
//! `D(β, γ) = −∫f(−βψ̂ − γ) − β c_E − γ c_Γ`. Because `H − L` is a positive quadratic
//! form, every iterate satisfies `H ≥ E`.
//!
//! Near the upper part of the admissible set (`β < 0`) this map decreases `I`
//! monotonically. Where `β > 0` the linearized step stops decreasing `I`, and the
//! solver switches to Newton's method on the first-order system
//! `i'(q) + βψ + γ = 0`, `H = E`, `C = Γ`, solved on the tangent space of the
//! constraints. Slow linear convergence triggers the same switch.

use crate::domain::Grid;
use crate::error::{Error, Result};
use crate::functionals::Topography;
use crate::prior::PriorModel;

use super::init::{feasible_init, warm_init};
use super::krylov::conjugate_gradient;
use super::{
    Ensemble, EquilibriumState, IteratePhase, IterateRecord, Problem, SolveStatus, SolverOptions,
};

struct DualSolution {
    beta: f64,
    gamma: f64,
    q: Vec<f64>,
}

/// Value, gradient and negated Hessian of the dual, or `None` outside the η-domain.
struct DualEval {
    value: f64,
    grad: [f64; 2],
    hess: [f64; 3],
    q: Vec<f64>,
}

impl Problem<'_> {
    fn dual_eval(
        &self,
        psi: &[f64],
        c_e: f64,
        c_g: f64,
        beta: f64,
        gamma: f64,
    ) -> Option<DualEval> {
        let h = self.h();
        let (mut f_sum, mut g_b, mut g_g) = (0.0, 0.0, 0.0);
        let (mut h_bb, mut h_bg, mut h_gg) = (0.0, 0.0, 0.0);
        let mut q = Vec::with_capacity(psi.len());
        for &p in psi {
            let eta = -beta * p - gamma;
            let (d1, d2) = self.prior.mean_field_derivs(eta)?;
            let f = self.prior.cgf(eta).ok()?;
            f_sum += f;
            g_b += d1 * p;
            g_g += d1;
            h_bb += d2 * p * p;
            h_bg += d2 * p;
            h_gg += d2;
            q.push(d1);
        }
        if !f_sum.is_finite() {
            return None;
        }
        Some(DualEval {
            value: -h * f_sum - beta * c_e - gamma * c_g,
            grad: [h * g_b - c_e, h * g_g - c_g],
            hess: [h * h_bb, h * h_bg, h * h_gg],
            q,
        })
    }

    /// Maximizes the dual by damped Newton, with coordinate ascent as fallback.
    fn solve_dual(
        &self,
        psi: &[f64],
        c_e: f64,
        c_g: f64,
        start: (f64, f64),
        tol: f64,
        max_iters: usize,
    ) -> Option<DualSolution> {
        let scale = [tol * (1.0 + c_e.abs()), tol * (1.0 + c_g.abs())];
        let done = |g: &[f64; 2]| g[0].abs() <= scale[0] && g[1].abs() <= scale[1];

        let (mut beta, mut gamma) = start;
        let mut ev = match self.dual_eval(psi, c_e, c_g, beta, gamma) {
            Some(ev) => ev,
            None => {
                // restart from the origin, which is always in the domain
                beta = 0.0;
                gamma = 0.0;
                self.dual_eval(psi, c_e, c_g, 0.0, 0.0)?
            }
        };
        for _ in 0..max_iters {
            if done(&ev.grad) {
                return Some(DualSolution {
                    beta,
                    gamma,
                    q: ev.q,
                });
            }
            let [a, b, c] = ev.hess;
            let det = a * c - b * b;
            if !(det > 0.0) || !det.is_finite() {
                break;
            }
            let db = (c * ev.grad[0] - b * ev.grad[1]) / det;
            let dg = (a * ev.grad[1] - b * ev.grad[0]) / det;
            let slope = ev.grad[0] * db + ev.grad[1] * dg;
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                if let Some(trial) = self.dual_eval(psi, c_e, c_g, beta + t * db, gamma + t * dg) {
                    if trial.value >= ev.value + 1e-4 * t * slope || done(&trial.grad) {
                        accepted = Some(trial);
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some(trial) => {
                    beta += t * db;
                    gamma += t * dg;
                    ev = trial;
                }
                None => break,
            }
            if beta.abs() > 1e12 || gamma.abs() > 1e12 {
                return None;
            }
        }
        if done(&ev.grad) {
            return Some(DualSolution {
                beta,
                gamma,
                q: ev.q,
            });
        }
        self.coordinate_ascent(psi, c_e, c_g, beta, gamma, &done)
    }

    /// Alternating one-dimensional maximizations in `γ` and `β`, each by
    /// safeguarded Newton inside a bisection bracket on the partial derivative.
    fn coordinate_ascent(
        &self,
        psi: &[f64],
        c_e: f64,
        c_g: f64,
        mut beta: f64,
        mut gamma: f64,
        done: &dyn Fn(&[f64; 2]) -> bool,
    ) -> Option<DualSolution> {
        for _ in 0..500 {
            gamma = self.line_root(
                |g| {
                    self.dual_eval(psi, c_e, c_g, beta, g)
                        .map(|e| (e.grad[1], e.hess[2]))
                },
                gamma,
            )?;
            beta = self.line_root(
                |b| {
                    self.dual_eval(psi, c_e, c_g, b, gamma)
                        .map(|e| (e.grad[0], e.hess[0]))
                },
                beta,
            )?;
            let ev = self.dual_eval(psi, c_e, c_g, beta, gamma)?;
            if done(&ev.grad) {
                return Some(DualSolution {
                    beta,
                    gamma,
                    q: ev.q,
                });
            }
        }
        None
    }

    /// Root of a decreasing partial derivative `g(x)` with curvature `−g'(x) = k(x)`.
    /// Points outside the domain count as `g = −∞` on the side they occur.
    fn line_root(&self, eval: impl Fn(f64) -> Option<(f64, f64)>, x0: f64) -> Option<f64> {
        let (g0, _) = eval(x0)?;
        if g0 == 0.0 {
            return Some(x0);
        }
        let dir = g0.signum();
        let mut lo = x0;
        let mut hi = None;
        let mut step = 1.0;
        // bracket: move uphill until the derivative changes sign or the domain ends
        while hi.is_none() {
            let x = lo + dir * step;
            match eval(x) {
                Some((g, _)) if g.signum() == dir => {
                    lo = x;
                    step *= 2.0;
                }
                _ => hi = Some(x),
            }
            if step > 1e12 {
                return None;
            }
        }
        let mut hi = hi?;
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let Some((g, k)) = eval(x) else {
                hi = x;
                x = 0.5 * (lo + hi);
                continue;
            };
            if g.signum() == dir {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x + g / k;
            let inside = (newton - lo) * (newton - hi) < 0.0;
            let next = if inside { newton } else { 0.5 * (lo + hi) };
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                return Some(next);
            }
            x = next;
        }
        Some(x)
    }

    /// One Newton step on the constrained first-order system from `(q, β, γ)`.
    /// Returns the accepted point, or `None` when no step reduces the merit.
    fn kkt_step(
        &self,
        q: &[f64],
        psi: &[f64],
        beta: f64,
        gamma: f64,
        targets: (f64, f64),
    ) -> Option<(Vec<f64>, Vec<f64>, f64, f64)> {
        let n = q.len();
        let h = self.h();
        let merit = |q: &[f64], psi: &[f64], beta: f64, gamma: f64| -> Option<f64> {
            let (d1, _) = self.rate_derivs(q)?;
            let r1: f64 = d1
                .iter()
                .zip(psi)
                .map(|(d, p)| (d + beta * p + gamma).powi(2))
                .sum();
            let re = self.energy(q, psi) - targets.0;
            let rg = self.circulation(q) - targets.1;
            Some(h * r1 + re * re + rg * rg)
        };

        let (d1, d2) = self.rate_derivs(q)?;
        let f1: Vec<f64> = (0..n).map(|j| d1[j] + beta * psi[j] + gamma).collect();
        let re = self.energy(q, psi) - targets.0;
        let rg = self.circulation(q) - targets.1;
        let m0 = h * f1.iter().map(|v| v * v).sum::<f64>() + re * re + rg * rg;

        // orthonormal basis {u1, u2} of span{1, ψ}
        let sqrt_n = (n as f64).sqrt();
        let mean_psi = psi.iter().sum::<f64>() / n as f64;
        let u2_raw: Vec<f64> = psi.iter().map(|p| p - mean_psi).collect();
        let norm2 = u2_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm2 > 0.0) {
            return None;
        }
        let u1 = 1.0 / sqrt_n;
        let u2: Vec<f64> = u2_raw.iter().map(|v| v / norm2).collect();
        let project = |v: &mut Vec<f64>| {
            let a = v.iter().sum::<f64>() * u1;
            let b: f64 = v.iter().zip(&u2).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(&u2) {
                *x -= a * u1 + b * y;
            }
        };
        let apply_a = |v: &[f64]| -> Vec<f64> {
            let gv = self.green(v);
            (0..n).map(|j| d2[j] * v[j] + beta * gv[j]).collect()
        };

        // particular solution of 1ᵀdq = −rg/h, ψᵀdq = −re/h inside span{u1, u2}
        let a_coef = -rg / (h * sqrt_n);
        let psi_u1 = psi.iter().sum::<f64>() * u1;
        let c_coef = (-re / h - a_coef * psi_u1) / norm2;
        let dq_p: Vec<f64> = u2.iter().map(|v| a_coef * u1 + c_coef * v).collect();

        let a_dqp = apply_a(&dq_p);
        let mut rhs: Vec<f64> = (0..n).map(|j| -(f1[j] + a_dqp[j])).collect();
        project(&mut rhs);
        let cg = conjugate_gradient(
            |v| {
                let mut w = apply_a(v);
                project(&mut w);
                w
            },
            &rhs,
            1e-12,
            4 * n + 50,
        );
        let mut w = cg.x;
        if cg.negative_curvature && w.iter().all(|v| *v == 0.0) {
            w = rhs.clone();
        }
        let dq: Vec<f64> = dq_p.iter().zip(&w).map(|(a, b)| a + b).collect();

        // multiplier update: least squares for ψ dβ + 1 dγ ≈ −(F₁ + A dq)
        let a_dq = apply_a(&dq);
        let r: Vec<f64> = (0..n).map(|j| -(f1[j] + a_dq[j])).collect();
        let (s11, s12, s22) = (
            psi.iter().map(|p| p * p).sum::<f64>(),
            psi.iter().sum::<f64>(),
            n as f64,
        );
        let (t1, t2) = (
            psi.iter().zip(&r).map(|(p, v)| p * v).sum::<f64>(),
            r.iter().sum::<f64>(),
        );
        let det = s11 * s22 - s12 * s12;
        if !(det > 0.0) {
            return None;
        }
        let db = (s22 * t1 - s12 * t2) / det;
        let dg = (s11 * t2 - s12 * t1) / det;

        let mut t = 1.0;
        for _ in 0..40 {
            let trial: Vec<f64> = q.iter().zip(&dq).map(|(a, b)| a + t * b).collect();
            if self.information(&trial).is_some() {
                let tpsi = self.psi(&trial);
                let (tb, tg) = (beta + t * db, gamma + t * dg);
                if let Some(m) = merit(&trial, &tpsi, tb, tg) {
                    if m <= (1.0 - 1e-4 * t) * m0 {
                        return Some((trial, tpsi, tb, tg));
                    }
                }
            }
            t *= 0.5;
        }
        None
    }
}

fn record(
    p: &Problem,
    k: usize,
    phase: IteratePhase,
    q: &[f64],
    psi: &[f64],
    beta: f64,
    gamma: f64,
) -> IterateRecord {
    IterateRecord {
        iteration: k,
        phase,
        information: p.information(q).unwrap_or(f64::INFINITY),
        energy: p.energy(q, psi),
        circulation: p.circulation(q),
        beta,
        gamma,
    }
}

/// Microcanonical equilibrium at energy `E` and circulation `Γ`.
///
/// The starting field comes from `opts.warm_start` when present (falling back to
/// [`feasible_init`]). Every returned state records its iterate history.
pub fn solve_microcanonical(
    grid: &Grid,
    prior: &PriorModel,
    topo: &Topography,
    energy: f64,
    circulation: f64,
    opts: &SolverOptions,
) -> Result<EquilibriumState> {
    opts.validate()?;
    let p = Problem::new(grid, prior, topo)?;
    let infeasible = |reason: &str| Error::Infeasible {
        energy,
        circulation,
        reason: reason.into(),
    };

    let (q0, mut beta, mut gamma) = match &opts.warm_start {
        Some(w) => match warm_init(grid, prior, topo, &w.q, energy, circulation) {
            Ok(q) => (q, w.beta, w.gamma),
            Err(_) => (
                feasible_init(grid, prior, topo, energy, circulation)?,
                0.0,
                0.0,
            ),
        },
        None => (
            feasible_init(grid, prior, topo, energy, circulation)?,
            0.0,
            0.0,
        ),
    };
    let mut q = q0.into_vec();
    let mut psi = p.psi(&q);
    let mut info = p
        .information(&q)
        .ok_or_else(|| infeasible("initial field has infinite information"))?;

    let tol_e = opts.constraint_tol * (1.0 + energy.abs());
    let tol_g = opts.constraint_tol * (1.0 + circulation.abs());
    let dual_tol = 1e-3 * opts.constraint_tol;
    let converged = |p: &Problem, q: &[f64], psi: &[f64], beta: f64, gamma: f64| {
        (p.energy(q, psi) - energy).abs() <= tol_e
            && (p.circulation(q) - circulation).abs() <= tol_g
            && p.residual(q, psi, beta, gamma) <= opts.residual_tol
    };

    let mut history = vec![record(
        &p,
        0,
        IteratePhase::Linearized,
        &q,
        &psi,
        beta,
        gamma,
    )];
    let mut phase = IteratePhase::Linearized;
    let mut newton_steps = 0;
    let mut last_gap = f64::INFINITY;
    let mut slow = 0;
    let mut status = SolveStatus::MaxIterations;

    let mut k = 0;
    while k < opts.max_outer_iters {
        k += 1;
        match phase {
            IteratePhase::Linearized => {
                let h_old = p.energy(&q, &psi);
                let c_e = energy - h_old + p.grid.dot(&psi, &q);
                let c_g = circulation + p.b_integral();
                let Some(sub) = p.solve_dual(
                    &psi,
                    c_e,
                    c_g,
                    (beta, gamma),
                    dual_tol,
                    opts.newton_max_iters,
                ) else {
                    if k == 1 {
                        return Err(infeasible("the linearized constraints cannot be met"));
                    }
                    status = SolveStatus::Stalled;
                    break;
                };

                // damp toward the previous iterate until I does not increase
                let mut t = 1.0;
                let mut accepted = None;
                while t >= 1.0 / 64.0 {
                    let trial: Vec<f64> =
                        q.iter().zip(&sub.q).map(|(a, b)| a + t * (b - a)).collect();
                    if let Some(i) = p.information(&trial) {
                        if i <= info + 1e-12 {
                            accepted = Some((trial, i));
                            break;
                        }
                    }
                    t *= 0.5;
                }
                let Some((trial, i_new)) = accepted else {
                    phase = IteratePhase::Newton;
                    k -= 1;
                    continue;
                };
                q = trial;
                info = i_new;
                psi = p.psi(&q);
                beta = sub.beta;
                gamma = sub.gamma;
                history.push(record(
                    &p,
                    k,
                    IteratePhase::Linearized,
                    &q,
                    &psi,
                    beta,
                    gamma,
                ));

                if converged(&p, &q, &psi, beta, gamma) {
                    status = SolveStatus::Converged;
                    break;
                }
                if newton_steps > 0 {
                    // a full linearized step after the Newton phase did not finish; go back
                    phase = IteratePhase::Newton;
                    continue;
                }
                let gap = ((p.energy(&q, &psi) - energy).abs() / tol_e)
                    .max(p.residual(&q, &psi, beta, gamma) / opts.residual_tol);
                if gap > 0.5 * last_gap {
                    slow += 1;
                } else {
                    slow = 0;
                }
                last_gap = gap;
                if slow >= 5 || t < 1.0 {
                    phase = IteratePhase::Newton;
                }
            }
            IteratePhase::Newton => {
                newton_steps += 1;
                match p.kkt_step(&q, &psi, beta, gamma, (energy, circulation)) {
                    Some((nq, npsi, nb, ng)) => {
                        q = nq;
                        psi = npsi;
                        beta = nb;
                        gamma = ng;
                        info = p.information(&q).unwrap_or(f64::INFINITY);
                        history.push(record(&p, k, IteratePhase::Newton, &q, &psi, beta, gamma));
                        let strict = 1e-2;
                        let close = (p.energy(&q, &psi) - energy).abs() <= strict * tol_e
                            && (p.circulation(&q) - circulation).abs() <= strict * tol_g
                            && p.residual(&q, &psi, beta, gamma) <= strict * opts.residual_tol;
                        if close {
                            // finish with a linearized step so that H ≥ E holds exactly
                            phase = IteratePhase::Linearized;
                        }
                    }
                    None => {
                        if converged(&p, &q, &psi, beta, gamma) {
                            status = SolveStatus::Converged;
                        } else {
                            status = SolveStatus::Stalled;
                        }
                        break;
                    }
                }
                if newton_steps >= opts.newton_max_iters && phase == IteratePhase::Newton {
                    status = SolveStatus::Stalled;
                    break;
                }
            }
        }
    }

    Ok(p.state(
        Ensemble::Microcanonical,
        q,
        psi,
        beta,
        gamma,
        k,
        status,
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DeformationRadius, GridSpec};

    fn zonal(n2: usize) -> (Grid, PriorModel, Topography) {
        let g = Grid::new(GridSpec::unit(1, n2, DeformationRadius::Finite(0.2))).unwrap();
        let topo = Topography::zonal_sine(&g, 1.0);
        (g, PriorModel::gamma_skew(0.1).unwrap(), topo)
    }

    #[test]
    fn dual_recovers_known_multipliers() {
        let (g, prior, topo) = zonal(64);
        let p = Problem::new(&g, &prior, &topo).unwrap();
        let psi: Vec<f64> = g
            .x2()
            .iter()
            .map(|x| 0.01 * (std::f64::consts::PI * x).cos())
            .collect();
        let (b0, g0) = (-30.0, 0.2);
        let q: Vec<f64> = psi
            .iter()
            .map(|s| prior.mean_field(-b0 * s - g0).unwrap())
            .collect();
        let c_e = g.dot(&psi, &q);
        let c_g = g.cell_area() * q.iter().sum::<f64>();
        let sol = p.solve_dual(&psi, c_e, c_g, (0.0, 0.0), 1e-13, 50).unwrap();
        assert!((sol.beta - b0).abs() < 1e-8 && (sol.gamma - g0).abs() < 1e-9);
    }

    #[test]
    fn triple_jet_state() {
        let (g, prior, topo) = zonal(256);
        let s =
            solve_microcanonical(&g, &prior, &topo, 0.05, -0.5, &SolverOptions::default()).unwrap();
        assert!(s.converged, "{:?} after {}", s.status, s.iterations);
        assert!(s.beta < 0.0);
        assert!((s.circulation + 0.5).abs() <= 1e-8 * 1.5);
        assert!(s.energy >= 0.05 - 1e-8);
    }

    #[test]
    fn positive_temperature_state() {
        let (g, prior, topo) = zonal(256);
        let s =
            solve_microcanonical(&g, &prior, &topo, 0.05, 2.0, &SolverOptions::default()).unwrap();
        assert!(s.converged, "{:?} after {}", s.status, s.iterations);
        assert!(s.beta > 0.0);
        assert!((s.beta - 3.6529).abs() < 1e-3, "{}", s.beta);
    }
}
