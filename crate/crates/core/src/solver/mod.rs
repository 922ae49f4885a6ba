//! Canonical and microcanonical maximum-entropy solvers.
//!
//! Both ensembles share the mean-field equation `q = f'(−βψ − γ)`, `ψ = G(q − b)`.
//! The canonical solver fixes `(β, γ)` and minimizes `I + βH + γC`; the
//! microcanonical solver fixes `(E, Γ)` and minimizes `I` on the constraint set,
//! recovering `(β, γ)` as Lagrange multipliers.

mod canonical;
mod init;
pub(crate) mod krylov;
mod microcanonical;

use serde::{Deserialize, Serialize};

use crate::domain::{Field, Grid};
use crate::error::{Error, Result};
use crate::functionals::Topography;
use crate::prior::PriorModel;

pub use canonical::solve_canonical;
pub use init::{cosine_family_coefficients, feasible_init, warm_init};
pub use microcanonical::solve_microcanonical;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_outer_iters: usize,
    /// Relative tolerance on `|H − E|` and `|C − Γ|`.
    pub constraint_tol: f64,
    /// Tolerance on the L² mean-field residual.
    pub residual_tol: f64,
    /// Step length `ω ∈ (0, 1]` of the canonical fixed-point iteration.
    pub damping: f64,
    pub newton_max_iters: usize,
    #[serde(skip)]
    pub warm_start: Option<Box<EquilibriumState>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_outer_iters: 500,
            constraint_tol: 1e-8,
            residual_tol: 1e-8,
            damping: 0.5,
            newton_max_iters: 50,
            warm_start: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.constraint_tol) || !positive(self.residual_tol) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_outer_iters == 0 || self.newton_max_iters == 0 {
            return Err(Error::InvalidArgument(
                "iteration limits must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_warm_start(mut self, state: EquilibriumState) -> Self {
        self.warm_start = Some(Box::new(state));
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    Canonical,
    Microcanonical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// No acceptable step could be found from the last iterate.
    Stalled,
    /// The canonical objective fell without bound: no canonical minimizer at `(β, γ)`.
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IteratePhase {
    /// Step toward the minimizer of `I` under linearized constraints.
    Linearized,
    /// Newton step on the first-order system.
    Newton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub phase: IteratePhase,
    pub information: f64,
    pub energy: f64,
    pub circulation: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    pub ensemble: Ensemble,
    pub q: Field,
    pub psi: Field,
    pub beta: f64,
    pub gamma: f64,
    /// `S = −I(q̄)`
    pub entropy: f64,
    pub energy: f64,
    pub circulation: f64,
    pub meanfield_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: SolveStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<IterateRecord>,
}

/// `‖q̄ − f'(−βψ̄ − γ)‖`; `+∞` when the argument leaves the η-domain.
pub fn meanfield_residual(
    state: &EquilibriumState,
    prior: &PriorModel,
    grid: &Grid,
) -> Result<f64> {
    grid.check(&state.q)?;
    grid.check(&state.psi)?;
    Ok(residual_raw(
        grid,
        prior,
        state.q.values(),
        state.psi.values(),
        state.beta,
        state.gamma,
    ))
}

fn residual_raw(
    grid: &Grid,
    prior: &PriorModel,
    q: &[f64],
    psi: &[f64],
    beta: f64,
    gamma: f64,
) -> f64 {
    let mut sum = 0.0;
    for (&qj, &pj) in q.iter().zip(psi) {
        match prior.mean_field(-beta * pj - gamma) {
            Some(m) => sum += (qj - m).powi(2),
            None => return f64::INFINITY,
        }
    }
    (sum * grid.cell_area()).sqrt()
}

/// Shared evaluation context for one solve.
pub(crate) struct Problem<'a> {
    pub grid: &'a Grid,
    pub prior: &'a PriorModel,
    pub topo: &'a Topography,
    b_integral: f64,
}

impl<'a> Problem<'a> {
    pub fn new(grid: &'a Grid, prior: &'a PriorModel, topo: &'a Topography) -> Result<Self> {
        grid.check(topo.field())?;
        let b_integral = grid.integral(topo.field())?;
        Ok(Problem {
            grid,
            prior,
            topo,
            b_integral,
        })
    }

    pub fn h(&self) -> f64 {
        self.grid.cell_area()
    }

    pub fn psi(&self, q: &[f64]) -> Vec<f64> {
        let rel: Vec<f64> = q
            .iter()
            .zip(self.topo.field().values())
            .map(|(a, b)| a - b)
            .collect();
        self.grid.green_raw(&rel).into_vec()
    }

    /// `G v` for a perturbation `v`.
    pub fn green(&self, v: &[f64]) -> Vec<f64> {
        self.grid.green_raw(v).into_vec()
    }

    pub fn energy(&self, q: &[f64], psi: &[f64]) -> f64 {
        let b = self.topo.field().values();
        0.5 * self.h()
            * q.iter()
                .zip(b)
                .zip(psi)
                .map(|((q, b), p)| (q - b) * p)
                .sum::<f64>()
    }

    pub fn circulation(&self, q: &[f64]) -> f64 {
        self.h() * q.iter().sum::<f64>() - self.b_integral
    }

    pub fn b_integral(&self) -> f64 {
        self.b_integral
    }

    pub fn information(&self, q: &[f64]) -> Option<f64> {
        self.prior.information_raw(self.grid, q).finite()
    }

    /// Pointwise `(i'(q), i''(q))`.
    pub fn rate_derivs(&self, q: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut d1 = Vec::with_capacity(q.len());
        let mut d2 = Vec::with_capacity(q.len());
        for &y in q {
            let (a, b) = self.prior.rate_derivs_opt(y)?;
            d1.push(a);
            d2.push(b);
        }
        Some((d1, d2))
    }

    pub fn residual(&self, q: &[f64], psi: &[f64], beta: f64, gamma: f64) -> f64 {
        residual_raw(self.grid, self.prior, q, psi, beta, gamma)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn state(
        &self,
        ensemble: Ensemble,
        q: Vec<f64>,
        psi: Vec<f64>,
        beta: f64,
        gamma: f64,
        iterations: usize,
        status: SolveStatus,
        history: Vec<IterateRecord>,
    ) -> EquilibriumState {
        let entropy = self.information(&q).map_or(f64::NEG_INFINITY, |i| -i);
        let energy = self.energy(&q, &psi);
        let circulation = self.circulation(&q);
        let meanfield_residual = self.residual(&q, &psi, beta, gamma);
        EquilibriumState {
            ensemble,
            q: Field::from_vec(q),
            psi: Field::from_vec(psi),
            beta,
            gamma,
            entropy,
            energy,
            circulation,
            meanfield_residual,
            iterations,
            converged: status == SolveStatus::Converged,
            status,
            history,
        }
    }
}
