//! Feasible starting fields for the microcanonical iteration.

use std::f64::consts::PI;

use crate::domain::{Field, Grid};
use crate::error::{Error, Result};
use crate::functionals::Topography;
use crate::prior::PriorModel;

use super::Problem;

/// Real roots `c` of `a c² + b c + c0 = e`, smallest magnitude first.
fn quadratic_roots(a: f64, b: f64, c0: f64, e: f64) -> Vec<f64> {
    let c = c0 - e;
    let disc = b * b - 4.0 * a * c;
    if a <= 0.0 || disc < 0.0 {
        return Vec::new();
    }
    let s = disc.sqrt();
    let sign = if b >= 0.0 { 1.0 } else { -1.0 };
    let t = -0.5 * (b + sign * s);
    let mut roots = if t == 0.0 {
        vec![0.0, 0.0]
    } else {
        vec![t / a, c / t]
    };
    roots.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    roots
}

/// Coefficients `(c₀, c₁)` of `q⁰ = b + c₀ + c₁cos(πx₂/ℓ₂)` with `C(q⁰) = Γ`
/// and `H(q⁰) = E`, one pair per real root, smallest `|c₁|` first.
pub fn cosine_family_coefficients(
    grid: &Grid,
    topo: &Topography,
    energy: f64,
    circulation: f64,
) -> Result<Vec<(f64, f64)>> {
    grid.check(topo.field())?;
    let l2 = grid.spec().channel_width;
    let area = grid.area();
    let cos = grid.field_from_fn(|_, x2| (PI * x2 / l2).cos());
    let kappa = grid.integral(&cos)?;
    let phi = cos.map(|v| v - kappa / area);
    let u = circulation / area;
    let g_phi = grid.green_raw(phi.values());
    let g_one = grid.green_raw(grid.constant(1.0).values());
    let a = 0.5 * grid.dot(phi.values(), g_phi.values());
    let b = u * grid.integral(&g_phi)?;
    let c0 = 0.5 * u * u * grid.integral(&g_one)?;
    Ok(quadratic_roots(a, b, c0, energy)
        .into_iter()
        .map(|c1| (u - c1 * kappa / area, c1))
        .collect())
}

/// Mean-zero perturbation used to adjust the energy at fixed circulation.
fn energy_mode(grid: &Grid) -> Field {
    let l2 = grid.spec().channel_width;
    let cos = grid.field_from_fn(|_, x2| (PI * x2 / l2).cos());
    let mean = cos.values().iter().sum::<f64>() / cos.len() as f64;
    cos.map(|v| v - mean)
}

/// Adds `c·φ` to `base` so that `H = E`; keeps roots with finite information.
fn adjust_energy(p: &Problem, base: &Field, energy: f64) -> Option<(Field, f64)> {
    let phi = energy_mode(p.grid);
    let psi_base = p.psi(base.values());
    let g_phi = p.green(phi.values());
    let a = 0.5 * p.grid.dot(phi.values(), &g_phi);
    let b = p.grid.dot(phi.values(), &psi_base);
    let c0 = p.energy(base.values(), &psi_base);
    quadratic_roots(a, b, c0, energy)
        .into_iter()
        .filter_map(|c| {
            let q = base.axpy(c, &phi);
            p.information(q.values()).map(|i| (q, i))
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
}

/// Wall-concentrated circulation profiles `r⁻² + (s⁻² − r⁻²) cosh(x₂/s)/cosh(ℓ₂/2s)`.
/// At `s = r` the profile is flat; as `s → 0` its energy per unit circulation decreases.
fn boundary_layer_profile(grid: &Grid, s: f64) -> Field {
    let l2 = grid.spec().channel_width;
    let r2 = grid.spec().deformation_radius.inverse_square();
    let edge = (0.5 * l2 / s).cosh();
    grid.field_from_fn(|_, x2| r2 + (s.powi(-2) - r2) * (x2 / s).cosh() / edge)
}

/// Initial field with `C(q⁰) = Γ` and `H(q⁰) = E`.
///
/// Tries `q⁰ = b + c₀ + c₁cos(πx₂/ℓ₂)` first. When no root keeps `I` finite, the
/// constant part is replaced by progressively more wall-concentrated profiles,
/// which reach lower energies at the same circulation.
pub fn feasible_init(
    grid: &Grid,
    prior: &PriorModel,
    topo: &Topography,
    energy: f64,
    circulation: f64,
) -> Result<Field> {
    let p = Problem::new(grid, prior, topo)?;
    check_targets(energy, circulation)?;
    let area = grid.area();
    let flat = topo.field() + &grid.constant(circulation / area);
    if let Some((q, _)) = adjust_energy(&p, &flat, energy) {
        return Ok(q);
    }

    let l2 = grid.spec().channel_width;
    let dx2 = l2 / grid.n2() as f64;
    let mut s = match grid.spec().deformation_radius {
        crate::domain::DeformationRadius::Finite(r) => r.min(l2),
        crate::domain::DeformationRadius::Infinite => l2,
    };
    while s >= 2.0 * dx2 {
        let prof = boundary_layer_profile(grid, s);
        let total = grid.integral(&prof)?;
        let base = topo.field().axpy(circulation / total, &prof);
        if let Some((q, _)) = adjust_energy(&p, &base, energy) {
            return Ok(q);
        }
        s *= 0.8;
    }
    Err(Error::Infeasible {
        energy,
        circulation,
        reason: "no initial field with finite information attains the constraints".into(),
    })
}

/// Initial field built from a neighbouring solution: a constant shift restores
/// the circulation and a cosine mode restores the energy.
pub fn warm_init(
    grid: &Grid,
    prior: &PriorModel,
    topo: &Topography,
    neighbour: &Field,
    energy: f64,
    circulation: f64,
) -> Result<Field> {
    let p = Problem::new(grid, prior, topo)?;
    grid.check(neighbour)?;
    check_targets(energy, circulation)?;
    let shift = (circulation - p.circulation(neighbour.values())) / grid.area();
    let base = neighbour.map(|v| v + shift);
    adjust_energy(&p, &base, energy)
        .map(|(q, _)| q)
        .ok_or_else(|| Error::Infeasible {
            energy,
            circulation,
            reason: "warm start cannot be adjusted to the constraints".into(),
        })
}

fn check_targets(energy: f64, circulation: f64) -> Result<()> {
    if !(energy.is_finite() && energy > 0.0) || !circulation.is_finite() {
        return Err(Error::Infeasible {
            energy,
            circulation,
            reason: "energy must be positive and both targets finite".into(),
        });
    }
    Ok(())
}
