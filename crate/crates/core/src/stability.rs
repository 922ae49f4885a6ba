//! Second-variation diagnostics of equilibrium states.
//!
//! The second variation of `I + βH + γC` at `q̄` is the symmetric operator
//! `z ↦ i''(q̄) z + βGz`. Its lowest eigenvalue on the whole space decides
//! canonical nondegeneracy; on the tangent space `{⟨ψ̄, z⟩ = 0, ⟨1, z⟩ = 0}` it
//! decides microcanonical nondegeneracy. Eigenvalues are those of the Rayleigh
//! quotient `D₂(z, z)/‖z‖²` and do not depend on the cell area.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Field, Grid};
use crate::error::{Error, Result};
use crate::prior::PriorModel;
use crate::solver::EquilibriumState;

/// Largest problem solved by dense symmetric eigendecomposition.
pub const DENSE_LIMIT: usize = 1024;
const LANCZOS_MAX_STEPS: usize = 400;
const EIG_RTOL: f64 = 1e-9;

/// The operator `i''(q̄) + βG`.
pub struct SecondVariation<'a> {
    diag: Field,
    beta: f64,
    grid: &'a Grid,
}

#[derive(Clone, Copy, Debug)]
pub enum Subspace<'s> {
    Full,
    /// Orthogonal complement of `span{ψ̄, 1}`.
    Tangent(&'s Field),
}

impl<'a> SecondVariation<'a> {
    pub fn new(grid: &'a Grid, diag: Field, beta: f64) -> Result<Self> {
        grid.check(&diag)?;
        if diag.values().iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidArgument(
                "second-variation diagonal must be positive".into(),
            ));
        }
        Ok(SecondVariation { diag, beta, grid })
    }

    pub fn diag(&self) -> &Field {
        &self.diag
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let gz = self.grid.green_raw(z);
        z.iter()
            .zip(self.diag.values())
            .zip(gz.values())
            .map(|((z, d), g)| d * z + self.beta * g)
            .collect()
    }

    /// `D₂(z₁, z₂) = ∫ [i''(q̄) z₁ z₂ + β z₁ G z₂]`
    pub fn bilinear(&self, z1: &Field, z2: &Field) -> Result<f64> {
        self.grid.check(z1)?;
        self.grid.check(z2)?;
        Ok(self.grid.dot(z1.values(), &self.apply(z2.values())))
    }

    /// Dense matrix of the operator in grid coordinates.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e);
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        // the Green matrix is symmetric up to rounding
        let t = m.transpose();
        (m + t) * 0.5
    }
}

/// Second variation at an equilibrium state.
pub fn second_variation<'a>(
    state: &EquilibriumState,
    prior: &PriorModel,
    grid: &'a Grid,
) -> Result<SecondVariation<'a>> {
    grid.check(&state.q)?;
    let diag = state
        .q
        .values()
        .iter()
        .map(|&q| prior.rate_derivs(q).map(|d| d.1))
        .collect::<Result<Vec<_>>>()?;
    SecondVariation::new(grid, Field::from_vec(diag), state.beta)
}

/// Orthonormal (Euclidean) basis of `span{1, ψ̄}`; errors when `ψ̄` is parallel to `1`.
fn constraint_basis(psi: &[f64]) -> Result<[Vec<f64>; 2]> {
    let n = psi.len();
    let u1 = vec![1.0 / (n as f64).sqrt(); n];
    let mean = psi.iter().sum::<f64>() / n as f64;
    let mut u2: Vec<f64> = psi.iter().map(|p| p - mean).collect();
    let norm = u2.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = psi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12 * scale) {
        return Err(Error::DegenerateGeometry(
            "ψ̄ is parallel to the constant field".into(),
        ));
    }
    u2.iter_mut().for_each(|v| *v /= norm);
    Ok([u1, u2])
}

fn project(basis: &[Vec<f64>], v: &mut [f64]) {
    for u in basis {
        let c: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        for (x, y) in v.iter_mut().zip(u) {
            *x -= c * y;
        }
    }
}

/// Smallest eigenvalue of a symmetric operator, densely or by Lanczos.
fn smallest_eigenvalue(n: usize, apply: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Result<f64> {
    if n <= DENSE_LIMIT {
        let mut m = DMatrix::zeros(n, n);
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                apply(&e)
            })
            .collect();
        for (j, col) in cols.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        let t = m.transpose();
        let sym = (m + t) * 0.5;
        let eig = SymmetricEigen::new(sym);
        return Ok(eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min));
    }
    lanczos_smallest(n, apply)
}

/// Lanczos with full reorthogonalization from a seeded random start.
fn lanczos_smallest(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);

    let steps = LANCZOS_MAX_STEPS.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);
    let mut scale: f64 = 0.0;
    let mut last = f64::INFINITY;
    for k in 0..steps {
        let mut w = apply(&v);
        let alpha: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        alphas.push(alpha);
        basis.push(v.clone());
        for b in &basis {
            let c: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
            w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let beta = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        scale = scale.max(alpha.abs() + beta);

        let m = k + 1;
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (idx, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty tridiagonal");
        let residual = beta * eig.eigenvectors[(m - 1, idx)].abs();
        if residual <= EIG_RTOL * scale.max(1e-300) || beta <= 1e-14 * scale || m == n {
            return Ok(theta);
        }
        if (theta - last).abs() <= 1e-14 * scale && residual <= 1e-6 * scale {
            return Ok(theta);
        }
        last = theta;
        betas.push(beta);
        v = w.into_iter().map(|x| x / beta).collect();
    }
    Err(Error::EigenNonconvergence(steps))
}

/// Smallest eigenvalue of the operator on the whole space or on the tangent space.
pub fn min_eig(op: &SecondVariation, subspace: Subspace) -> Result<f64> {
    let n = op.grid.len();
    match subspace {
        Subspace::Full => smallest_eigenvalue(n, |z| op.apply(z)),
        Subspace::Tangent(psi) => {
            op.grid.check(psi)?;
            let basis = constraint_basis(psi.values())?;
            // the complement is shifted above every tangent eigenvalue
            let shift = nu_of(op) + 1.0;
            smallest_eigenvalue(n, |z| {
                let mut pz = z.to_vec();
                project(&basis, &mut pz);
                let mut out = op.apply(&pz);
                project(&basis, &mut out);
                for (o, (zi, pzi)) in out.iter_mut().zip(z.iter().zip(&pz)) {
                    *o += shift * (zi - pzi);
                }
                out
            })
        }
    }
}

fn nu_of(op: &SecondVariation) -> f64 {
    op.diag.max() + op.beta.abs() / op.grid.lambda_min()
}

/// `ν = max i''(q̄) + |β|/λ₁`, an upper bound of the second variation.
pub fn nu_bound(state: &EquilibriumState, prior: &PriorModel, grid: &Grid) -> Result<f64> {
    Ok(nu_of(&second_variation(state, prior, grid)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArnoldCheck {
    pub dqdpsi_min: f64,
    pub dqdpsi_max: f64,
    pub lambda_min: f64,
    /// `dq̄/dψ̄ < 0` everywhere.
    pub rayleigh_ok: bool,
    /// `0 < dq̄/dψ̄ < λ₁` everywhere.
    pub arnold2_ok: bool,
}

/// Pointwise `dq̄/dψ̄ = −β / i''(q̄)`.
pub fn dqdpsi(state: &EquilibriumState, prior: &PriorModel, grid: &Grid) -> Result<Field> {
    let op = second_variation(state, prior, grid)?;
    Ok(op.diag.map(|d| -state.beta / d))
}

pub fn arnold_check(
    state: &EquilibriumState,
    prior: &PriorModel,
    grid: &Grid,
) -> Result<ArnoldCheck> {
    let slope = dqdpsi(state, prior, grid)?;
    let (lo, hi) = (slope.min(), slope.max());
    let lambda_min = grid.lambda_min();
    Ok(ArnoldCheck {
        dqdpsi_min: lo,
        dqdpsi_max: hi,
        lambda_min,
        rayleigh_ok: hi < 0.0,
        arnold2_ok: lo > 0.0 && hi < lambda_min,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Penalization {
    pub sigma: f64,
    pub tau: f64,
    pub theta: f64,
    pub eps_hat: f64,
    /// Common value `σθ‖ψ̄‖² = τθ‖1‖²`.
    pub k: f64,
}

/// Penalty weights of the augmented Lagrangian that make its second variation
/// at least `μ/2` on the whole space.
///
/// `θ` is the smallest eigenvalue of the Gram matrix of `ψ̄/‖ψ̄‖` and `1/‖1‖`.
pub fn penalization_constants(
    psi: &Field,
    mu_tangent: f64,
    nu: f64,
    grid: &Grid,
) -> Result<Penalization> {
    grid.check(psi)?;
    if !(mu_tangent > 0.0) || !(nu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "penalization needs μ > 0 and ν > 0, got μ = {mu_tangent}, ν = {nu}"
        )));
    }
    let one = grid.constant(1.0);
    let norm_psi = grid.norm(psi)?;
    let norm_one = grid.norm(&one)?;
    if !(norm_psi > 0.0) {
        return Err(Error::DegenerateGeometry("ψ̄ vanishes".into()));
    }
    let cos = grid.inner_product(psi, &one)? / (norm_psi * norm_one);
    let theta = 1.0 - cos.abs().min(1.0);
    if theta < 1e-12 {
        return Err(Error::DegenerateGeometry(
            "ψ̄ is parallel to the constant field".into(),
        ));
    }
    let eps_hat = mu_tangent / (2.0 * nu);
    let k = mu_tangent / 2.0 + nu / eps_hat + nu;
    Ok(Penalization {
        sigma: k / (theta * norm_psi * norm_psi),
        tau: k / (theta * norm_one * norm_one),
        theta,
        eps_hat,
        k,
    })
}

/// Smallest eigenvalue of `D₂ + σ ψ̄⊗ψ̄ + τ 1⊗1`, the second variation of the
/// penalized functional.
pub fn verify_penalized_hessian(
    op: &SecondVariation,
    psi: &Field,
    sigma: f64,
    tau: f64,
) -> Result<f64> {
    op.grid.check(psi)?;
    let h = op.grid.cell_area();
    let p = psi.values();
    smallest_eigenvalue(op.grid.len(), |z| {
        let mut out = op.apply(z);
        let sp = sigma * h * p.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        let so = tau * h * z.iter().sum::<f64>();
        for (o, pi) in out.iter_mut().zip(p) {
            *o += sp * pi + so;
        }
        out
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub energy: f64,
    pub circulation: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n1: usize,
    pub n2: usize,
    pub mu_full: f64,
    pub mu_tangent: f64,
    pub nu: f64,
    pub lambda_min: f64,
    pub dqdpsi_min: f64,
    pub dqdpsi_max: f64,
    pub theta: Option<f64>,
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub penalized_min: Option<f64>,
    pub rayleigh_ok: bool,
    pub arnold2_ok: bool,
    pub canonical_nondegenerate: bool,
    pub microcanonical_nondegenerate: bool,
    pub lyapunov_penalized_ok: bool,
}

/// Full stability report for one state.
///
/// A minimum eigenvalue counts as positive only above `1e-6·ν`.
pub fn analyze(
    state: &EquilibriumState,
    prior: &PriorModel,
    grid: &Grid,
) -> Result<StabilityReport> {
    let op = second_variation(state, prior, grid)?;
    let nu = nu_of(&op);
    let mu_full = min_eig(&op, Subspace::Full)?;
    let mu_tangent = min_eig(&op, Subspace::Tangent(&state.psi))?;
    let arnold = arnold_check(state, prior, grid)?;
    let margin = 1e-6 * nu;

    let (theta, sigma, tau, penalized_min) = if mu_tangent > margin {
        match penalization_constants(&state.psi, mu_tangent, nu, grid) {
            Ok(pen) => {
                let m = verify_penalized_hessian(&op, &state.psi, pen.sigma, pen.tau)?;
                (Some(pen.theta), Some(pen.sigma), Some(pen.tau), Some(m))
            }
            Err(Error::DegenerateGeometry(_)) => (None, None, None, None),
            Err(e) => return Err(e),
        }
    } else {
        (None, None, None, None)
    };

    Ok(StabilityReport {
        energy: state.energy,
        circulation: state.circulation,
        beta: state.beta,
        gamma: state.gamma,
        n1: grid.n1(),
        n2: grid.n2(),
        mu_full,
        mu_tangent,
        nu,
        lambda_min: arnold.lambda_min,
        dqdpsi_min: arnold.dqdpsi_min,
        dqdpsi_max: arnold.dqdpsi_max,
        theta,
        sigma,
        tau,
        penalized_min,
        rayleigh_ok: arnold.rayleigh_ok,
        arnold2_ok: arnold.arnold2_ok,
        canonical_nondegenerate: mu_full > margin,
        microcanonical_nondegenerate: mu_tangent > margin,
        lyapunov_penalized_ok: penalized_min.is_some_and(|m| m >= mu_tangent / 2.0 - 1e-8),
    })
}

/// Reports for many states, computed in parallel and returned in input order.
pub fn analyze_batch(
    states: &[EquilibriumState],
    prior: &PriorModel,
    grid: &Grid,
) -> Vec<Result<StabilityReport>> {
    states.par_iter().map(|s| analyze(s, prior, grid)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DeformationRadius, GridSpec};
    use crate::solver::{Ensemble, SolveStatus};

    fn grid(n1: usize, n2: usize) -> Grid {
        Grid::new(GridSpec::unit(n1, n2, DeformationRadius::Finite(0.2))).unwrap()
    }

    fn state(grid: &Grid, q: Field, psi: Field, beta: f64) -> EquilibriumState {
        grid.check(&q).unwrap();
        EquilibriumState {
            ensemble: Ensemble::Canonical,
            q,
            psi,
            beta,
            gamma: 0.0,
            entropy: 0.0,
            energy: 0.0,
            circulation: 0.0,
            meanfield_residual: 0.0,
            iterations: 0,
            converged: true,
            status: SolveStatus::Converged,
            history: vec![],
        }
    }

    #[test]
    fn identity_at_zero_multiplier() {
        let g = grid(4, 16);
        let prior = PriorModel::gamma_skew(0.1).unwrap();
        let s = state(&g, g.constant(0.0), g.field_from_fn(|_, x2| x2), 0.0);
        let op = second_variation(&s, &prior, &g).unwrap();
        assert!(op.diag().values().iter().all(|d| *d == 1.0));
        assert!((min_eig(&op, Subspace::Full).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nu_bound(&s, &prior, &g).unwrap(), 1.0);
        let a = arnold_check(&s, &prior, &g).unwrap();
        assert!(!a.rayleigh_ok && !a.arnold2_ok);
    }

    #[test]
    fn shifted_lowest_mode() {
        let g = grid(4, 32);
        let prior = PriorModel::gamma_skew(0.1).unwrap();
        let lam = g.lambda_min();
        let s = state(&g, g.constant(0.0), g.constant(0.0), -lam / 2.0);
        let op = second_variation(&s, &prior, &g).unwrap();
        assert!((min_eig(&op, Subspace::Full).unwrap() - 0.5).abs() < 1e-10);
        let s2 = state(&g, g.constant(0.0), g.constant(0.0), lam);
        assert!((nu_bound(&s2, &prior, &g).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let g = grid(8, 32);
        let diag = g.field_from_fn(|x1, x2| 1.0 + 0.3 * (6.0 * x1).sin() * x2);
        let op = SecondVariation::new(&g, diag, -45.0).unwrap();
        let dense = smallest_eigenvalue(g.len(), |z| op.apply(z)).unwrap();
        let lanczos = lanczos_smallest(g.len(), |z| op.apply(z)).unwrap();
        assert!(
            (dense - lanczos).abs() < 1e-8 * dense.abs().max(1.0),
            "{dense} {lanczos}"
        );
    }

    #[test]
    fn penalization_arithmetic() {
        let g = grid(1, 64);
        let psi = g.field_from_fn(|_, x2| (2.0 * std::f64::consts::PI * x2).sin());
        let pen = penalization_constants(&psi, 1.0, 1.0, &g).unwrap();
        assert!((pen.eps_hat - 0.5).abs() < 1e-15);
        assert!((pen.k - 3.5).abs() < 1e-15);
        assert!((pen.theta - 1.0).abs() < 1e-12);
        let lhs = pen.sigma * g.norm(&psi).unwrap().powi(2) * pen.theta;
        let rhs = pen.tau * pen.theta;
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(matches!(
            penalization_constants(&g.constant(2.0), 1.0, 1.0, &g),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(penalization_constants(&psi, -1.0, 1.0, &g).is_err());
    }

    #[test]
    fn zero_penalty_returns_full_minimum() {
        let g = grid(1, 64);
        let op = SecondVariation::new(&g, g.constant(1.0), -50.0).unwrap();
        let psi = g.field_from_fn(|_, x2| (std::f64::consts::PI * x2).cos());
        let full = min_eig(&op, Subspace::Full).unwrap();
        let pen = verify_penalized_hessian(&op, &psi, 0.0, 0.0).unwrap();
        assert!((full - pen).abs() < 1e-12);
        let tangent = min_eig(&op, Subspace::Tangent(&psi)).unwrap();
        assert!(tangent >= full);
    }

    #[test]
    fn bilinear_form_is_symmetric() {
        let g = grid(8, 16);
        let op = SecondVariation::new(&g, g.field_from_fn(|x, y| 1.5 + x * y), 7.0).unwrap();
        let a = g.field_from_fn(|x, y| (3.0 * x).cos() + y);
        let b = g.field_from_fn(|x, y| x * x - (5.0 * y).sin());
        let (ab, ba) = (op.bilinear(&a, &b).unwrap(), op.bilinear(&b, &a).unwrap());
        assert!((ab - ba).abs() <= 1e-12);
        let d = op.dense();
        assert!((&d - d.transpose()).amax() < 1e-15);
    }
}
