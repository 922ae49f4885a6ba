//! Energy, circulation and velocity of a macrostate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::domain::{Field, Grid};
use crate::error::Result;

/// Topographic inhomogeneity `b` in the potential vorticity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topography {
    b: Field,
    amplitude: f64,
}

impl Topography {
    /// `b = B₂ sin(2πx₂/ℓ₂)`
    pub fn zonal_sine(grid: &Grid, amplitude: f64) -> Self {
        let l2 = grid.spec().channel_width;
        Topography {
            b: grid.field_from_fn(|_, x2| amplitude * (2.0 * PI * x2 / l2).sin()),
            amplitude,
        }
    }

    pub fn flat(grid: &Grid) -> Self {
        Topography {
            b: grid.constant(0.0),
            amplitude: 0.0,
        }
    }

    pub fn from_field(grid: &Grid, b: Field) -> Result<Self> {
        grid.check(&b)?;
        let amplitude = b.max_abs();
        Ok(Topography { b, amplitude })
    }

    pub fn field(&self) -> &Field {
        &self.b
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

/// A macrostate together with its streamfunction.
#[derive(Clone, Debug)]
pub struct FlowState<'a> {
    pub q: Field,
    pub psi: Field,
    pub grid: &'a Grid,
    pub topography: &'a Topography,
}

impl<'a> FlowState<'a> {
    pub fn new(grid: &'a Grid, q: Field, topography: &'a Topography) -> Result<Self> {
        let psi = streamfunction(grid, &q, topography)?;
        Ok(FlowState {
            q,
            psi,
            grid,
            topography,
        })
    }

    pub fn energy(&self) -> f64 {
        0.5 * self.grid.dot(
            self.psi.values(),
            (&self.q - self.topography.field()).values(),
        )
    }

    pub fn circulation(&self) -> f64 {
        relative_integral(self.grid, &self.q, self.topography)
    }
}

fn relative_integral(grid: &Grid, q: &Field, topo: &Topography) -> f64 {
    grid.cell_area()
        * q.values()
            .iter()
            .zip(topo.field().values())
            .map(|(a, b)| a - b)
            .sum::<f64>()
}

/// `ψ = G(q − b)`
pub fn streamfunction(grid: &Grid, q: &Field, topo: &Topography) -> Result<Field> {
    grid.check(q)?;
    grid.check(topo.field())?;
    Ok(grid.green_raw((q - topo.field()).values()))
}

/// `H(q) = ½⟨q − b, G(q − b)⟩`
pub fn energy(grid: &Grid, q: &Field, topo: &Topography) -> Result<f64> {
    Ok(FlowState::new(grid, q.clone(), topo)?.energy())
}

/// `½∫(|∇ψ|² + r⁻²ψ²)`, with the gradient taken spectrally.
pub fn gradient_energy(grid: &Grid, psi: &Field) -> Result<f64> {
    let d1 = grid.d_dx1(psi)?;
    let d2 = grid.d_dx2(psi)?;
    let r2 = grid.spec().deformation_radius.inverse_square();
    let density = grid.dot(d1.values(), d1.values())
        + grid.dot(d2.values(), d2.values())
        + r2 * grid.dot(psi.values(), psi.values());
    Ok(0.5 * density)
}

/// `C(q) = ∫(q − b)`
pub fn circulation(grid: &Grid, q: &Field, topo: &Topography) -> Result<f64> {
    grid.check(q)?;
    grid.check(topo.field())?;
    Ok(relative_integral(grid, q, topo))
}

/// Velocity `(v₁, v₂) = (∂ψ/∂x₂, −∂ψ/∂x₁)`.
pub fn mean_velocity(grid: &Grid, psi: &Field) -> Result<(Field, Field)> {
    let v1 = grid.d_dx2(psi)?;
    let v2 = grid.d_dx1(psi)?.map(|v| -v);
    Ok((v1, v2))
}

/// Zonally averaged `(x₂, v₁)` profile.
pub fn zonal_velocity_profile(grid: &Grid, psi: &Field) -> Result<Vec<(f64, f64)>> {
    let (v1, _) = mean_velocity(grid, psi)?;
    Ok(grid
        .x2()
        .iter()
        .copied()
        .zip(grid.zonal_mean(&v1))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DeformationRadius, GridSpec};
    use approx::assert_relative_eq;

    fn grid(n1: usize, n2: usize, r: DeformationRadius) -> Grid {
        Grid::new(GridSpec::unit(n1, n2, r)).unwrap()
    }

    fn offset(g: &Grid, topo: &Topography, f: impl Fn(f64, f64) -> f64) -> Field {
        topo.field() + &g.field_from_fn(f)
    }

    #[test]
    fn streamfunction_of_eigenmodes() {
        let g = grid(4, 64, DeformationRadius::Finite(0.2));
        let topo = Topography::zonal_sine(&g, 1.0);
        assert_eq!(
            streamfunction(&g, topo.field(), &topo).unwrap().max_abs(),
            0.0
        );

        let q = offset(&g, &topo, |_, x2| (PI * x2).cos());
        let psi = streamfunction(&g, &q, &topo).unwrap();
        let lam = PI * PI + 25.0;
        for ((_, x2), v) in g.cell_centers().zip(psi.values()) {
            assert!((v - (PI * x2).cos() / lam).abs() < 1e-13);
        }

        let g = grid(1, 64, DeformationRadius::Infinite);
        let topo = Topography::flat(&g);
        let q = g.field_from_fn(|_, x2| (2.0 * PI * x2).sin());
        let psi = streamfunction(&g, &q, &topo).unwrap();
        for ((_, x2), v) in g.cell_centers().zip(psi.values()) {
            assert!((v - (2.0 * PI * x2).sin() / (4.0 * PI * PI)).abs() < 1e-13);
        }
    }

    #[test]
    fn energy_and_circulation_values() {
        let g = grid(8, 128, DeformationRadius::Finite(0.2));
        let topo = Topography::zonal_sine(&g, 1.0);
        assert_eq!(energy(&g, topo.field(), &topo).unwrap(), 0.0);
        assert_eq!(circulation(&g, topo.field(), &topo).unwrap(), 0.0);

        let q = offset(&g, &topo, |_, x2| (PI * x2).cos());
        let e = energy(&g, &q, &topo).unwrap();
        assert_relative_eq!(e, 1.0 / (4.0 * (PI * PI + 25.0)), max_relative = 1e-4);
        assert!((e - 0.0071695).abs() < 1e-6);
        let q2 = offset(&g, &topo, |_, x2| 2.0 * (PI * x2).cos());
        assert_relative_eq!(
            energy(&g, &q2, &topo).unwrap(),
            4.0 * e,
            max_relative = 1e-12
        );

        assert!((circulation(&g, &q, &topo).unwrap() - 2.0 / PI).abs() < 1e-4);
        let q1 = offset(&g, &topo, |_, _| 1.0);
        assert_relative_eq!(
            circulation(&g, &q1, &topo).unwrap(),
            1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn velocity_of_cosine_streamfunction() {
        let g = grid(8, 64, DeformationRadius::Finite(0.2));
        let (v1, v2) = mean_velocity(&g, &g.constant(0.0)).unwrap();
        assert_eq!((v1.max_abs(), v2.max_abs()), (0.0, 0.0));

        let psi = g.field_from_fn(|_, x2| (PI * x2).cos());
        let (v1, v2) = mean_velocity(&g, &psi).unwrap();
        for ((_, x2), v) in g.cell_centers().zip(v1.values()) {
            assert!((v + PI * (PI * x2).sin()).abs() < 1e-10);
        }
        assert!(v2.max_abs() < 1e-12);
    }

    #[test]
    fn zonal_state_has_no_meridional_velocity() {
        let g = grid(16, 64, DeformationRadius::Finite(0.2));
        let topo = Topography::zonal_sine(&g, 1.0);
        let q = offset(&g, &topo, |_, x2| (3.0 * x2).tanh() + 0.4);
        let psi = streamfunction(&g, &q, &topo).unwrap();
        let (v1, v2) = mean_velocity(&g, &psi).unwrap();
        assert!(v2.max_abs() <= 1e-10 * v1.max_abs());
        let profile = zonal_velocity_profile(&g, &psi).unwrap();
        assert_eq!(profile.len(), 64);
    }

    #[test]
    fn gradient_form_matches_green_form() {
        let g = grid(16, 32, DeformationRadius::Finite(0.5));
        let topo = Topography::zonal_sine(&g, 0.7);
        let q = offset(&g, &topo, |x1, x2| {
            (2.0 * PI * x1).cos() * (PI * x2).cos()
                + 0.3 * (4.0 * PI * x1).sin() * (3.0 * PI * x2).cos()
        });
        let state = FlowState::new(&g, q, &topo).unwrap();
        let grad = gradient_energy(&g, &state.psi).unwrap();
        assert_relative_eq!(grad, state.energy(), max_relative = 1e-10);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let g = grid(4, 8, DeformationRadius::Infinite);
        let topo = Topography::flat(&g);
        assert!(energy(&g, &Field::zeros(5), &topo).is_err());
        assert!(mean_velocity(&g, &Field::zeros(5)).is_err());
    }
}
