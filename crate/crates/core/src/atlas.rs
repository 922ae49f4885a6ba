//! Tabulated microcanonical entropy over the constraint plane and the
//! equivalence classification derived from its concavity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Grid;
use crate::error::{Error, Result};
use crate::functionals::Topography;
use crate::prior::PriorModel;
use crate::solver::{
    solve_canonical, solve_microcanonical, EquilibriumState, SolveStatus, SolverOptions,
};

/// Evenly spaced values `min + k·step`, with optional exclusion of either end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
    #[serde(default = "yes")]
    pub include_min: bool,
    #[serde(default = "yes")]
    pub include_max: bool,
}

fn yes() -> bool {
    true
}

impl Axis {
    pub fn closed(min: f64, max: f64, step: f64) -> Self {
        Axis {
            min,
            max,
            step,
            include_min: true,
            include_max: true,
        }
    }

    /// `(min, max]`
    pub fn left_open(min: f64, max: f64, step: f64) -> Self {
        Axis {
            include_min: false,
            ..Axis::closed(min, max, step)
        }
    }

    /// `[min, max)`
    pub fn right_open(min: f64, max: f64, step: f64) -> Self {
        Axis {
            include_max: false,
            ..Axis::closed(min, max, step)
        }
    }

    pub fn single(value: f64) -> Self {
        Axis::closed(value, value, 1.0)
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "axis step must be positive, got {}",
                self.step
            )));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.max >= self.min) {
            return Err(Error::InvalidArgument(
                "axis range must be finite and nonempty".into(),
            ));
        }
        let count = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        // Snap to the decimal grid of `min` and `step` so that 0.025·k prints as such.
        let decimals = |x: f64| {
            (0..=12).find(|&d| {
                let s = x * 10f64.powi(d);
                (s - s.round()).abs() <= 1e-9 * s.abs().max(1.0)
            })
        };
        let snap = decimals(self.min)
            .zip(decimals(self.step))
            .map(|(a, b)| 10f64.powi(a.max(b)));
        let mut out: Vec<f64> = (0..=count)
            .map(|k| {
                let v = self.min + k as f64 * self.step;
                snap.map_or(v, |s| (v * s).round() / s)
            })
            .collect();
        let slack = 1e-9 * self.step;
        if !self.include_max {
            out.retain(|v| *v < self.max - slack);
        }
        if !self.include_min {
            out.retain(|v| *v > self.min + slack);
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("axis contains no values".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub energy: f64,
    pub circulation: f64,
    /// A finite-information field meeting the constraints was found.
    pub admissible: bool,
    pub converged: bool,
    /// Cold and warm starts converged to entropies that differ beyond the contact tolerance.
    pub nonunique: bool,
    pub entropy: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub iterations: usize,
}

impl SurfacePoint {
    fn usable(&self) -> Option<(f64, f64, f64)> {
        match (self.converged, self.entropy, self.beta, self.gamma) {
            (true, Some(s), Some(b), Some(g)) => Some((s, b, g)),
            _ => None,
        }
    }
}

/// `S(E, Γ)` on a rectangular grid, stored row by row (one row per energy).
#[derive(Clone, Debug)]
pub struct EntropySurface {
    energies: Vec<f64>,
    circulations: Vec<f64>,
    points: Vec<SurfacePoint>,
    states: Vec<Option<EquilibriumState>>,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub solver: SolverOptions,
    /// Solve every point from both a cold and a warm start.
    pub multistart: bool,
    /// Keep the solved fields for later cross-checks.
    pub keep_states: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            solver: SolverOptions::default(),
            multistart: true,
            keep_states: true,
        }
    }
}

/// Tolerances of the supporting-plane and contact tests, relative to `1 + |S|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub support: f64,
    pub contact: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            support: 1e-6,
            contact: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "label", rename_all = "snake_case")]
pub enum EquivalenceLabel {
    Full,
    Partial {
        contacts: Vec<(f64, f64)>,
    },
    Nonequivalent {
        witness: (f64, f64),
        violation: f64,
    },
    Inadmissible,
    /// Admissible, but the solver did not converge, so no multipliers exist to test.
    Unresolved,
}

impl EquivalenceLabel {
    pub fn name(&self) -> &'static str {
        match self {
            EquivalenceLabel::Full => "full",
            EquivalenceLabel::Partial { .. } => "partial",
            EquivalenceLabel::Nonequivalent { .. } => "nonequivalent",
            EquivalenceLabel::Inadmissible => "inadmissible",
            EquivalenceLabel::Unresolved => "unresolved",
        }
    }

    pub fn witness(&self) -> Option<(f64, f64)> {
        match self {
            EquivalenceLabel::Nonequivalent { witness, .. } => Some(*witness),
            EquivalenceLabel::Partial { contacts } => contacts.first().copied(),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportOutcome {
    pub supported: bool,
    /// Grid point with the largest violation of the supporting-plane inequality.
    pub witness: Option<(f64, f64)>,
    pub max_violation: f64,
    /// Other grid points where `S` minus the plane has a local maximum within
    /// the contact tolerance of zero and whose local peak is not the tested
    /// point itself: separate touching points of the plane.
    pub contacts: Vec<(f64, f64)>,
}

fn solve_point(
    grid: &Grid,
    prior: &PriorModel,
    topo: &Topography,
    energy: f64,
    circulation: f64,
    warm: Option<&EquilibriumState>,
    opts: &SweepOptions,
) -> (SurfacePoint, Option<EquilibriumState>) {
    let mut cold_opts = opts.solver.clone();
    cold_opts.warm_start = None;
    let mut attempts = Vec::with_capacity(2);
    if warm.is_none() || opts.multistart {
        attempts.push(solve_microcanonical(
            grid,
            prior,
            topo,
            energy,
            circulation,
            &cold_opts,
        ));
    }
    if let Some(w) = warm {
        let o = cold_opts.clone().with_warm_start(w.clone());
        attempts.push(solve_microcanonical(
            grid,
            prior,
            topo,
            energy,
            circulation,
            &o,
        ));
    }

    let admissible = attempts
        .iter()
        .any(|a| !matches!(a, Err(Error::Infeasible { .. })));
    let converged: Vec<EquilibriumState> = attempts
        .into_iter()
        .filter_map(|a| a.ok())
        .filter(|s| s.converged)
        .collect();
    let nonunique = converged.len() == 2 && {
        let (a, b) = (converged[0].entropy, converged[1].entropy);
        (a - b).abs() > Tolerances::default().contact * (1.0 + a.abs().max(b.abs()))
    };
    let best = converged
        .into_iter()
        .max_by(|a, b| a.entropy.total_cmp(&b.entropy));
    let point = SurfacePoint {
        energy,
        circulation,
        admissible,
        converged: best.is_some(),
        nonunique,
        entropy: best.as_ref().map(|s| s.entropy),
        beta: best.as_ref().map(|s| s.beta),
        gamma: best.as_ref().map(|s| s.gamma),
        iterations: best.as_ref().map_or(0, |s| s.iterations),
    };
    (point, best)
}

/// Tabulates `S(E, Γ)` by microcanonical solves.
///
/// Each energy row is an independent warm-start chain along `Γ`, traversed in
/// alternating directions (serpentine order); rows run in parallel on the current
/// rayon pool and are merged by grid index, so the result does not depend on the
/// number of workers.
pub fn sweep_entropy(
    grid: &Grid,
    prior: &PriorModel,
    topo: &Topography,
    energy_axis: &Axis,
    circulation_axis: &Axis,
    opts: &SweepOptions,
) -> Result<EntropySurface> {
    opts.solver.validate()?;
    grid.check(topo.field())?;
    let energies = energy_axis.values()?;
    let circulations = circulation_axis.values()?;
    let ng = circulations.len();

    let rows: Vec<Vec<(SurfacePoint, Option<EquilibriumState>)>> = energies
        .par_iter()
        .enumerate()
        .map(|(row, &e)| {
            let order: Vec<usize> = if row % 2 == 0 {
                (0..ng).collect()
            } else {
                (0..ng).rev().collect()
            };
            let mut out: Vec<Option<(SurfacePoint, Option<EquilibriumState>)>> = vec![None; ng];
            let mut warm: Option<EquilibriumState> = None;
            for j in order {
                let (point, state) =
                    solve_point(grid, prior, topo, e, circulations[j], warm.as_ref(), opts);
                if let Some(s) = &state {
                    warm = Some(s.clone());
                }
                out[j] = Some((point, state));
            }
            out.into_iter()
                .map(|v| v.expect("every column is visited"))
                .collect()
        })
        .collect();

    let mut points = Vec::with_capacity(energies.len() * ng);
    let mut states = Vec::with_capacity(energies.len() * ng);
    for (p, s) in rows.into_iter().flatten() {
        points.push(p);
        states.push(if opts.keep_states { s } else { None });
    }
    Ok(EntropySurface {
        energies,
        circulations,
        points,
        states,
    })
}

impl EntropySurface {
    /// Surface from precomputed points, row-major with one row per energy.
    pub fn from_points(
        energies: Vec<f64>,
        circulations: Vec<f64>,
        points: Vec<SurfacePoint>,
    ) -> Result<Self> {
        if points.len() != energies.len() * circulations.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points for a {}×{} grid",
                points.len(),
                energies.len(),
                circulations.len()
            )));
        }
        let states = vec![None; points.len()];
        Ok(EntropySurface {
            energies,
            circulations,
            points,
            states,
        })
    }

    /// Synthetic surface from a closed-form entropy and its gradient.
    pub fn from_fn(
        energies: Vec<f64>,
        circulations: Vec<f64>,
        f: impl Fn(f64, f64) -> Option<(f64, f64, f64)>,
    ) -> Self {
        let mut points = Vec::with_capacity(energies.len() * circulations.len());
        for &e in &energies {
            for &g in &circulations {
                let v = f(e, g);
                points.push(SurfacePoint {
                    energy: e,
                    circulation: g,
                    admissible: v.is_some(),
                    converged: v.is_some(),
                    nonunique: false,
                    entropy: v.map(|t| t.0),
                    beta: v.map(|t| t.1),
                    gamma: v.map(|t| t.2),
                    iterations: 0,
                });
            }
        }
        let states = vec![None; points.len()];
        EntropySurface {
            energies,
            circulations,
            points,
            states,
        }
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn circulations(&self) -> &[f64] {
        &self.circulations
    }

    pub fn points(&self) -> &[SurfacePoint] {
        &self.points
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.energies.len(), self.circulations.len())
    }

    pub fn point(&self, i: usize, j: usize) -> &SurfacePoint {
        &self.points[i * self.circulations.len() + j]
    }

    pub fn state(&self, i: usize, j: usize) -> Option<&EquilibriumState> {
        self.states[i * self.circulations.len() + j].as_ref()
    }

    /// Grid indices of `(E, Γ)`, matched to within a small fraction of the spacing.
    pub fn locate(&self, energy: f64, circulation: f64) -> Result<(usize, usize)> {
        let find = |axis: &[f64], v: f64| {
            let spacing = if axis.len() > 1 {
                (axis[1] - axis[0]).abs()
            } else {
                1.0
            };
            axis.iter()
                .position(|a| (a - v).abs() <= 1e-6 * spacing.max(v.abs()))
        };
        match (
            find(&self.energies, energy),
            find(&self.circulations, circulation),
        ) {
            (Some(i), Some(j)) => Ok((i, j)),
            _ => Err(Error::InvalidArgument(format!(
                "({energy}, {circulation}) is not a point of the surface grid"
            ))),
        }
    }

    fn usable(&self) -> impl Iterator<Item = (usize, f64, f64, f64, f64, f64)> + '_ {
        self.points.iter().enumerate().filter_map(|(k, p)| {
            p.usable()
                .map(|(s, b, g)| (k, p.energy, p.circulation, s, b, g))
        })
    }

    /// Finite-difference Hessian of `S` at grid index `k` from neighbouring
    /// multipliers, one-sided at the edges.
    fn hessian(&self, k: usize) -> Option<[f64; 3]> {
        let ng = self.circulations.len();
        let (i, j) = (k / ng, k % ng);
        let grad = |i: usize, j: usize| {
            let p = &self.points[i * ng + j];
            p.usable().map(|(_, b, g)| (p.energy, p.circulation, b, g))
        };
        let here = grad(i, j)?;
        let diff =
            |lo: Option<(f64, f64, f64, f64)>, hi: Option<(f64, f64, f64, f64)>, along_e: bool| {
                let (a, b) = match (lo, hi) {
                    (Some(a), Some(b)) => (a, b),
                    (Some(a), None) => (a, here),
                    (None, Some(b)) => (here, b),
                    (None, None) => return None,
                };
                let h = if along_e { b.0 - a.0 } else { b.1 - a.1 };
                Some(((b.2 - a.2) / h, (b.3 - a.3) / h))
            };
        let ne = self.energies.len();
        let (be, ge) = diff(
            i.checked_sub(1).and_then(|i| grad(i, j)),
            (i + 1 < ne).then(|| grad(i + 1, j)).flatten(),
            true,
        )?;
        let (bg, gg) = diff(
            j.checked_sub(1).and_then(|j| grad(i, j)),
            (j + 1 < ng).then(|| grad(i, j + 1)).flatten(),
            false,
        )?;
        Some([be, 0.5 * (bg + ge), gg])
    }

    /// Whether the excess over the plane `(beta, gamma)` has a critical point
    /// nearer grid index `k` than the tested index `idx`, by one Newton step
    /// from `k` in lattice units. Without a concave local model at `k` the
    /// peak cannot be attributed to `idx`.
    fn peaks_near(&self, k: usize, idx: usize, beta: f64, gamma: f64) -> bool {
        let Some([a, b, c]) = self.hessian(k) else {
            return true;
        };
        let det = a * c - b * b;
        if !(a < 0.0 && det > 0.0) {
            return true;
        }
        let (p, q) = (&self.points[k], &self.points[idx]);
        let (gb, gg) = (p.beta.unwrap() - beta, p.gamma.unwrap() - gamma);
        let de = -(c * gb - b * gg) / det;
        let dg = -(a * gg - b * gb) / det;
        let step = |axis: &[f64]| {
            if axis.len() > 1 {
                (axis[1] - axis[0]).abs()
            } else {
                1.0
            }
        };
        let (he, hg) = (step(&self.energies), step(&self.circulations));
        let to_peak = (de / he).abs().max((dg / hg).abs());
        let (re, rg) = (
            (p.energy - q.energy + de) / he,
            (p.circulation - q.circulation + dg) / hg,
        );
        to_peak < re.abs().max(rg.abs())
    }

    /// Supporting-plane test at a grid point with the point's own multipliers.
    pub fn support_test(
        &self,
        energy: f64,
        circulation: f64,
        tol: &Tolerances,
    ) -> Result<SupportOutcome> {
        let (i, j) = self.locate(energy, circulation)?;
        let idx = i * self.circulations.len() + j;
        let Some((s, beta, gamma)) = self.points[idx].usable() else {
            return Err(Error::InvalidArgument(format!(
                "({energy}, {circulation}) has no converged multipliers"
            )));
        };
        let (e0, g0) = (self.points[idx].energy, self.points[idx].circulation);
        let tol_support = tol.support * (1.0 + s.abs());
        let tol_contact = tol.contact * (1.0 + s.abs());
        let ng = self.circulations.len();
        let mut excess = vec![None; self.points.len()];
        let mut worst: Option<((f64, f64), f64)> = None;
        for (k, e, g, s2, _, _) in self.usable() {
            let x = if k == idx {
                0.0
            } else {
                s2 - (s + beta * (e - e0) + gamma * (g - g0))
            };
            excess[k] = Some(x);
            if x > tol_support && worst.is_none_or(|(_, w)| x > w) {
                worst = Some(((e, g), x));
            }
        }
        let (ne, ng_i) = (self.energies.len() as isize, ng as isize);
        let local_max = |k: usize, x: f64| {
            let (ki, kj) = ((k / ng) as isize, (k % ng) as isize);
            (-1..=1)
                .flat_map(|di| (-1..=1).map(move |dj| (ki + di, kj + dj)))
                .all(|(a, b)| {
                    a < 0
                        || b < 0
                        || a >= ne
                        || b >= ng_i
                        || excess[(a * ng_i + b) as usize].is_none_or(|y| x >= y - tol_support)
                })
        };
        let contacts = excess
            .iter()
            .enumerate()
            .filter_map(|(k, x)| {
                let x = (*x)?;
                (k != idx
                    && x.abs() <= tol_contact
                    && local_max(k, x)
                    && self.peaks_near(k, idx, beta, gamma))
                .then(|| (self.points[k].energy, self.points[k].circulation))
            })
            .collect();
        Ok(SupportOutcome {
            supported: worst.is_none(),
            witness: worst.map(|w| w.0),
            max_violation: worst.map_or(0.0, |w| w.1),
            contacts,
        })
    }

    pub fn classify(
        &self,
        energy: f64,
        circulation: f64,
        tol: &Tolerances,
    ) -> Result<EquivalenceLabel> {
        let (i, j) = self.locate(energy, circulation)?;
        let p = self.point(i, j);
        if !p.admissible {
            return Ok(EquivalenceLabel::Inadmissible);
        }
        if p.usable().is_none() {
            return Ok(EquivalenceLabel::Unresolved);
        }
        let out = self.support_test(p.energy, p.circulation, tol)?;
        Ok(match (out.supported, out.witness) {
            (false, Some(w)) => EquivalenceLabel::Nonequivalent {
                witness: w,
                violation: out.max_violation,
            },
            _ if out.contacts.is_empty() => EquivalenceLabel::Full,
            _ => EquivalenceLabel::Partial {
                contacts: out.contacts,
            },
        })
    }

    /// Labels of every grid point, row-major.
    pub fn classify_all(&self, tol: &Tolerances) -> Vec<EquivalenceLabel> {
        self.points
            .par_iter()
            .map(|p| {
                self.classify(p.energy, p.circulation, tol)
                    .expect("grid points are always locatable")
            })
            .collect()
    }

    /// `Φ(β, γ) = min [βE + γΓ − S(E, Γ)]` over the converged grid points.
    pub fn conjugate_phi(&self, beta: f64, gamma: f64) -> Result<f64> {
        self.usable()
            .map(|(_, e, g, s, _, _)| beta * e + gamma * g - s)
            .min_by(f64::total_cmp)
            .ok_or_else(|| {
                Error::InvalidArgument("the surface has no admissible converged points".into())
            })
    }

    /// Multiplier sample for the hull: every point's `(β, γ)` plus a 21×21 box around them.
    fn hull_sample(&self) -> Vec<(f64, f64)> {
        let mut sample: Vec<(f64, f64)> = self.usable().map(|(_, _, _, _, b, g)| (b, g)).collect();
        if sample.is_empty() {
            return sample;
        }
        let (mut bmin, mut bmax, mut gmin, mut gmax) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(b, g) in &sample {
            bmin = bmin.min(b);
            bmax = bmax.max(b);
            gmin = gmin.min(g);
            gmax = gmax.max(g);
        }
        let pad_b = 0.5 * (bmax - bmin) + 1.0;
        let pad_g = 0.5 * (gmax - gmin) + 1.0;
        for a in 0..=20 {
            for c in 0..=20 {
                let b = bmin - pad_b + (bmax - bmin + 2.0 * pad_b) * a as f64 / 20.0;
                let g = gmin - pad_g + (gmax - gmin + 2.0 * pad_g) * c as f64 / 20.0;
                sample.push((b, g));
            }
        }
        sample
    }

    /// Concave hull `S** = inf [βE + γΓ − Φ(β, γ)]` at every grid point
    /// (`None` where the point is not usable).
    pub fn concave_hull(&self) -> Vec<Option<f64>> {
        let sample = self.hull_sample();
        let phis: Vec<(f64, f64, f64)> = sample
            .par_iter()
            .filter_map(|&(b, g)| self.conjugate_phi(b, g).ok().map(|phi| (b, g, phi)))
            .collect();
        self.points
            .par_iter()
            .map(|p| {
                p.usable()?;
                phis.iter()
                    .map(|&(b, g, phi)| b * p.energy + g * p.circulation - phi)
                    .min_by(f64::total_cmp)
            })
            .collect()
    }

    /// Centered finite differences of `S` against the multipliers at interior
    /// points whose four neighbours converged.
    pub fn gradient_consistency(&self) -> Vec<GradientCheck> {
        let (ne, ng) = self.shape();
        let mut out = Vec::new();
        for i in 1..ne.saturating_sub(1) {
            for j in 1..ng.saturating_sub(1) {
                let Some((_, b, g)) = self.point(i, j).usable() else {
                    continue;
                };
                let n = [
                    self.point(i - 1, j).usable(),
                    self.point(i + 1, j).usable(),
                    self.point(i, j - 1).usable(),
                    self.point(i, j + 1).usable(),
                ];
                let [Some(em), Some(ep), Some(gm), Some(gp)] = n else {
                    continue;
                };
                let fd_beta = (ep.0 - em.0) / (self.energies[i + 1] - self.energies[i - 1]);
                let fd_gamma =
                    (gp.0 - gm.0) / (self.circulations[j + 1] - self.circulations[j - 1]);
                let ok = (b - fd_beta).abs() <= (0.05 * b.abs()).max(0.02)
                    && (g - fd_gamma).abs() <= (0.05 * g.abs()).max(0.02);
                out.push(GradientCheck {
                    energy: self.energies[i],
                    circulation: self.circulations[j],
                    beta: b,
                    gamma: g,
                    fd_beta,
                    fd_gamma,
                    ok,
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub energy: f64,
    pub circulation: f64,
    pub beta: f64,
    pub gamma: f64,
    pub fd_beta: f64,
    pub fd_gamma: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalCrossCheck {
    pub energy: f64,
    pub circulation: f64,
    pub beta: f64,
    pub gamma: f64,
    pub status: SolveStatus,
    pub canonical_energy: f64,
    pub canonical_circulation: f64,
    /// `‖q̄_can − q̄_micro‖ / ‖q̄_micro‖`
    pub state_mismatch: f64,
    /// `max(|H − E| / |E|, |C − Γ| / max(|Γ|, 1))`
    pub constraint_mismatch: f64,
}

impl CanonicalCrossCheck {
    /// The canonical solve reproduces the microcanonical point within the given tolerances.
    pub fn agrees(&self, constraint_tol: f64, state_tol: f64) -> bool {
        self.status == SolveStatus::Converged
            && self.constraint_mismatch <= constraint_tol
            && self.state_mismatch <= state_tol
    }
}

/// Solves the canonical problem from a cold start at a point's multipliers and
/// compares the outcome with the microcanonical state.
pub fn cross_check_canonical(
    surface: &EntropySurface,
    energy: f64,
    circulation: f64,
    grid: &Grid,
    prior: &PriorModel,
    topo: &Topography,
    opts: &SolverOptions,
) -> Result<CanonicalCrossCheck> {
    let (i, j) = surface.locate(energy, circulation)?;
    let p = surface.point(i, j);
    let (Some(beta), Some(gamma)) = (p.beta, p.gamma) else {
        return Err(Error::InvalidArgument("point has no multipliers".into()));
    };
    let micro = surface
        .state(i, j)
        .ok_or_else(|| Error::InvalidArgument("surface was swept without keeping states".into()))?;
    let mut cold = opts.clone();
    cold.warm_start = None;
    let can = solve_canonical(grid, prior, topo, beta, gamma, &cold)?;
    let diff = &can.q - &micro.q;
    let state_mismatch = grid.norm(&diff)? / grid.norm(&micro.q)?.max(f64::MIN_POSITIVE);
    let constraint_mismatch = ((can.energy - p.energy).abs() / p.energy.abs())
        .max((can.circulation - p.circulation).abs() / p.circulation.abs().max(1.0));
    Ok(CanonicalCrossCheck {
        energy: p.energy,
        circulation: p.circulation,
        beta,
        gamma,
        status: can.status,
        canonical_energy: can.energy,
        canonical_circulation: can.circulation,
        state_mismatch: if state_mismatch.is_finite() {
            state_mismatch
        } else {
            f64::INFINITY
        },
        constraint_mismatch: if constraint_mismatch.is_finite() {
            constraint_mismatch
        } else {
            f64::INFINITY
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paraboloid(step: f64) -> EntropySurface {
        let e = Axis::closed(-1.0, 1.0, step).values().unwrap();
        let g = Axis::closed(-1.0, 1.0, step).values().unwrap();
        EntropySurface::from_fn(e, g, |e, g| Some((-(e * e + g * g), -2.0 * e, -2.0 * g)))
    }

    #[test]
    fn axis_values() {
        assert_eq!(Axis::closed(-2.0, 2.0, 0.1).values().unwrap().len(), 41);
        assert_eq!(
            Axis::left_open(0.0, 0.1, 0.0025).values().unwrap().len(),
            40
        );
        assert_eq!(
            Axis::right_open(-2.0, 2.0, 0.025).values().unwrap().len(),
            160
        );
        assert_eq!(Axis::single(0.05).values().unwrap(), vec![0.05]);
        let g = Axis::closed(-2.0, 2.0, 0.025).values().unwrap();
        assert_eq!((g[23], g[123]), (-1.425, 1.075));
        assert!(Axis::closed(0.0, 1.0, 0.0).values().is_err());
    }

    #[test]
    fn concave_surface_is_fully_equivalent() {
        let s = paraboloid(0.1);
        let tol = Tolerances::default();
        for &(e, g) in &[(0.0, 0.0), (0.3, -0.5), (-0.9, 0.9)] {
            assert!(s.support_test(e, g, &tol).unwrap().supported);
            assert_eq!(s.classify(e, g, &tol).unwrap(), EquivalenceLabel::Full);
        }
    }

    #[test]
    fn nonconcave_dip_is_detected() {
        // a double well in Γ: the centre lies below the chord between the wells
        let e = Axis::closed(0.0, 1.0, 0.1).values().unwrap();
        let g = Axis::closed(-1.0, 1.0, 0.05).values().unwrap();
        let s = EntropySurface::from_fn(e, g, |e, g| {
            Some((
                -e * e - (g * g - 0.25).powi(2),
                -2.0 * e,
                -4.0 * g * (g * g - 0.25),
            ))
        });
        let label = s.classify(0.5, 0.0, &Tolerances::default()).unwrap();
        let EquivalenceLabel::Nonequivalent { witness, violation } = label else {
            panic!("expected nonequivalence, got {label:?}");
        };
        assert!(violation > 1e-6 && witness.1.abs() > 0.1);
        let hull = s.concave_hull();
        let (i, j) = s.locate(0.5, 0.0).unwrap();
        let k = i * s.shape().1 + j;
        assert!(hull[k].unwrap() > s.points()[k].entropy.unwrap() + 1e-3);
    }

    #[test]
    fn fine_spacing_does_not_create_contacts() {
        // neighbours sit 2.5e-5 below the plane, inside the contact tolerance
        let s = paraboloid(0.005);
        let out = s.support_test(0.2, -0.3, &Tolerances::default()).unwrap();
        assert!(out.supported && out.contacts.is_empty());
        assert_eq!(
            s.classify(0.2, -0.3, &Tolerances::default()).unwrap(),
            EquivalenceLabel::Full
        );
    }

    #[test]
    fn tilted_ridge_does_not_alias_into_contacts() {
        // strongly anisotropic concave quadratic whose ridge runs along the
        // lattice diagonal (1, 2), so lattice points near it look like peaks
        let (a, b, c) = (-1700.0, 78.0, -4.4);
        let e = Axis::closed(0.0, 0.1, 0.00125).values().unwrap();
        let g = Axis::closed(0.5, 1.5, 0.0125).values().unwrap();
        let s = EntropySurface::from_fn(e, g, |e, g| {
            let (x, y) = (e - 0.05, g - 1.0);
            let s = 0.5 * (a * x * x + 2.0 * b * x * y + c * y * y);
            Some((s, a * x + b * y, b * x + c * y))
        });
        let tol = Tolerances::default();
        assert!(s.support_test(0.05, 1.0, &tol).unwrap().contacts.is_empty());
        let labels = s.classify_all(&tol);
        assert!(labels.iter().all(|l| l.name() == "full"));
    }

    #[test]
    fn off_grid_second_peak_is_a_contact() {
        // S touches the plane S = 0 at Γ = −0.5 and again at Γ = 0.535
        let e = Axis::closed(-0.2, 0.2, 0.05).values().unwrap();
        let g = Axis::closed(-1.0, 1.0, 0.01).values().unwrap();
        let s = EntropySurface::from_fn(e, g, |e, g| {
            let (u, v) = (g + 0.5, g - 0.535);
            let w = u * u * v * v;
            Some((-e * e - w, -2.0 * e, -2.0 * u * v * (u + v)))
        });
        let label = s.classify(0.0, -0.5, &Tolerances::default()).unwrap();
        assert_eq!(label.name(), "partial");
        let (_, gc) = label.witness().unwrap();
        assert!((gc - 0.535).abs() < 0.01, "contact at Γ = {gc}");
    }

    #[test]
    fn flat_direction_gives_partial_contacts() {
        let e = Axis::closed(0.0, 1.0, 0.1).values().unwrap();
        let g = Axis::closed(0.0, 1.0, 0.1).values().unwrap();
        let s = EntropySurface::from_fn(e, g, |e, g| Some((e - g * g, 1.0, -2.0 * g)));
        let label = s.classify(0.5, 0.5, &Tolerances::default()).unwrap();
        assert_eq!(label.name(), "partial");
        assert_eq!(label.witness().unwrap().1, 0.5);
    }

    #[test]
    fn conjugate_of_paraboloid() {
        let s = paraboloid(0.02);
        for (b, g) in [(0.0, 0.0), (0.4, -0.6), (-1.0, 1.2)] {
            let phi = s.conjugate_phi(b, g).unwrap();
            let exact = -(b * b + g * g) / 4.0;
            assert!(
                (phi - exact).abs() <= 2.0 * (0.02f64.powi(2) * 2.0),
                "{phi} vs {exact}"
            );
        }
        let hull = s.concave_hull();
        for (h, p) in hull.iter().zip(s.points()) {
            assert!((h.unwrap() - p.entropy.unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn inadmissible_points_are_labelled() {
        let e = vec![0.1, 0.2];
        let g = vec![0.0];
        let s = EntropySurface::from_fn(e, g, |e, _| (e > 0.15).then_some((1.0, 0.0, 0.0)));
        assert_eq!(
            s.classify(0.1, 0.0, &Tolerances::default()).unwrap(),
            EquivalenceLabel::Inadmissible
        );
        assert!(s.locate(0.3, 0.0).is_err());
        assert!(s.conjugate_phi(1.0, 1.0).is_ok());
    }
}
