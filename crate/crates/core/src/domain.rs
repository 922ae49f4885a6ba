//! Periodic channel discretization and the Green operator of `-Δ + r⁻²`.
//!
//! The channel is `|x₁| < ℓ₁/2`, `|x₂| < ℓ₂/2`, periodic in `x₁` with
//! `ψ = 0` on the walls `x₂ = ±ℓ₂/2`. Fields are sampled at the centers of a
//! uniform `n₁ × n₂` cell partition and stored row-major with `x₁` varying
//! fastest: value `(i, j)` lives at index `j * n₁ + i`.
//!
//! Spectral representation: a Fourier series in `x₁` times the sine basis
//! `sin(mπ(x₂ + ℓ₂/2)/ℓ₂)`, `m = 1..=n₂`, in `x₂`. Sampled at cell midpoints
//! this is an FFT in `x₁` and a DST-II/DST-III pair in `x₂`; the sine
//! transforms are computed through complex FFTs of length `2 n₂`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Rossby deformation radius. `Infinite` makes `r⁻²` exactly zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DeformationRadius {
    Finite(f64),
    Infinite,
}

impl DeformationRadius {
    pub fn inverse_square(&self) -> f64 {
        match *self {
            DeformationRadius::Finite(r) => 1.0 / (r * r),
            DeformationRadius::Infinite => 0.0,
        }
    }
}

impl fmt::Display for DeformationRadius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeformationRadius::Finite(r) => write!(f, "{r}"),
            DeformationRadius::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for DeformationRadius {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            DeformationRadius::Finite(r) => s.serialize_f64(r),
            DeformationRadius::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for DeformationRadius {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RadiusVisitor;

        impl Visitor<'_> for RadiusVisitor {
            type Value = DeformationRadius;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Self::Value, E> {
                if v.is_infinite() && v > 0.0 {
                    Ok(DeformationRadius::Infinite)
                } else {
                    Ok(DeformationRadius::Finite(v))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                Ok(DeformationRadius::Finite(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                Ok(DeformationRadius::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                match v.to_ascii_lowercase().as_str() {
                    "inf" | "infinity" | "+inf" => Ok(DeformationRadius::Infinite),
                    other => other
                        .parse::<f64>()
                        .map(DeformationRadius::Finite)
                        .map_err(|_| E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }

        d.deserialize_any(RadiusVisitor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub period_length: f64,
    pub channel_width: f64,
    pub n1: usize,
    pub n2: usize,
    pub deformation_radius: DeformationRadius,
}

impl GridSpec {
    pub fn new(
        period_length: f64,
        channel_width: f64,
        n1: usize,
        n2: usize,
        deformation_radius: DeformationRadius,
    ) -> Self {
        GridSpec {
            period_length,
            channel_width,
            n1,
            n2,
            deformation_radius,
        }
    }

    /// Unit-square channel.
    pub fn unit(n1: usize, n2: usize, deformation_radius: DeformationRadius) -> Self {
        Self::new(1.0, 1.0, n1, n2, deformation_radius)
    }

    /// `n₁ = 1` reduces the grid to zonal (x₁-independent) fields.
    pub fn validate(&self) -> Result<()> {
        if !(self.period_length.is_finite() && self.period_length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "period length must be positive, got {}",
                self.period_length
            )));
        }
        if !(self.channel_width.is_finite() && self.channel_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "channel width must be positive, got {}",
                self.channel_width
            )));
        }
        if !self.n1.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n1 must be a power of two, got {}",
                self.n1
            )));
        }
        if self.n2 < 2 || !self.n2.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n2 must be a power of two and at least 2, got {}",
                self.n2
            )));
        }
        if let DeformationRadius::Finite(r) = self.deformation_radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "deformation radius must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Cell-midpoint samples of a scalar on the channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(len: usize) -> Self {
        Field {
            values: vec![0.0; len],
        }
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Field {
            values: vec![value; len],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Field { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.len(), other.len());
        Field {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + alpha * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.map(|a| a * rhs)
    }
}

struct Plans {
    fft1: Arc<dyn Fft<f64>>,
    ifft1: Arc<dyn Fft<f64>>,
    fft2: Arc<dyn Fft<f64>>,
    ifft2: Arc<dyn Fft<f64>>,
    /// `exp(iπm / 2n₂)` for `m = 0..=n₂`.
    half_shift: Vec<Complex64>,
}

/// Immutable discretized channel. Safe to share across threads.
pub struct Grid {
    spec: GridSpec,
    cell_area: f64,
    x1: Vec<f64>,
    x2: Vec<f64>,
    /// `λ_{k,m}` indexed `k * n₂ + (m - 1)`, `k` in FFT order.
    eigenvalues: Vec<f64>,
    /// Signed x₁ wavenumber `2πk'/ℓ₁` per FFT index, zero at Nyquist.
    kx: Vec<f64>,
    lambda_min: f64,
    plans: Plans,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("spec", &self.spec)
            .field("lambda_min", &self.lambda_min)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Copy)]
enum Synthesis {
    Sine,
    Cosine,
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Grid> {
        spec.validate()?;
        let GridSpec {
            period_length: l1,
            channel_width: l2,
            n1,
            n2,
            ..
        } = spec;
        let r2 = spec.deformation_radius.inverse_square();

        let x1 = (0..n1)
            .map(|i| -0.5 * l1 + (i as f64 + 0.5) * l1 / n1 as f64)
            .collect();
        let x2 = (0..n2)
            .map(|j| -0.5 * l2 + (j as f64 + 0.5) * l2 / n2 as f64)
            .collect();

        let mut eigenvalues = Vec::with_capacity(n1 * n2);
        let mut kx = Vec::with_capacity(n1);
        for k in 0..n1 {
            let signed = if k <= n1 / 2 {
                k as f64
            } else {
                k as f64 - n1 as f64
            };
            let kappa = 2.0 * PI * signed / l1;
            kx.push(if n1 > 1 && k == n1 / 2 { 0.0 } else { kappa });
            for m in 1..=n2 {
                let ky = m as f64 * PI / l2;
                eigenvalues.push(kappa * kappa + ky * ky + r2);
            }
        }
        let lambda_min = (PI / l2).powi(2) + r2;

        let mut planner = FftPlanner::new();
        let plans = Plans {
            fft1: planner.plan_fft_forward(n1),
            ifft1: planner.plan_fft_inverse(n1),
            fft2: planner.plan_fft_forward(2 * n2),
            ifft2: planner.plan_fft_inverse(2 * n2),
            half_shift: (0..=n2)
                .map(|m| Complex64::from_polar(1.0, PI * m as f64 / (2 * n2) as f64))
                .collect(),
        };

        Ok(Grid {
            spec,
            cell_area: l1 * l2 / (n1 * n2) as f64,
            x1,
            x2,
            eigenvalues,
            kx,
            lambda_min,
            plans,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn n1(&self) -> usize {
        self.spec.n1
    }

    pub fn n2(&self) -> usize {
        self.spec.n2
    }

    pub fn len(&self) -> usize {
        self.spec.n1 * self.spec.n2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    /// `|𝒳| = ℓ₁ℓ₂`
    pub fn area(&self) -> f64 {
        self.spec.period_length * self.spec.channel_width
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }

    /// Cell centers in storage order.
    pub fn cell_centers(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x2
            .iter()
            .flat_map(move |&y| self.x1.iter().map(move |&x| (x, y)))
    }

    pub fn field_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        Field::from_vec(self.cell_centers().map(|(x, y)| f(x, y)).collect())
    }

    pub fn constant(&self, value: f64) -> Field {
        Field::constant(self.len(), value)
    }

    /// Smallest eigenvalue `(π/ℓ₂)² + r⁻²` of `-Δ + r⁻²` with these boundary conditions.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Eigenvalue of `-Δ + r⁻²` for FFT index `k` and sine mode `m ≥ 1`.
    pub fn eigenvalue(&self, k: usize, m: usize) -> f64 {
        self.eigenvalues[k * self.spec.n2 + (m - 1)]
    }

    /// Multipliers `1/λ_{k,m}` of the Green operator, in spectral storage order.
    pub fn green_multipliers(&self) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues.iter().map(|l| 1.0 / l)
    }

    pub fn check(&self, field: &Field) -> Result<()> {
        if field.len() != self.len() {
            return Err(Error::GridMismatch {
                expected: self.len(),
                found: field.len(),
            });
        }
        Ok(())
    }

    /// Midpoint rule for `∫ a b dx`.
    pub fn inner_product(&self, a: &Field, b: &Field) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.dot(a.values(), b.values()))
    }

    pub(crate) fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.cell_area * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn norm(&self, a: &Field) -> Result<f64> {
        Ok(self.inner_product(a, a)?.sqrt())
    }

    /// `∫ a dx`
    pub fn integral(&self, a: &Field) -> Result<f64> {
        self.check(a)?;
        Ok(self.cell_area * a.values().iter().sum::<f64>())
    }

    /// Solves `(-Δ + r⁻²)ψ = z` with the channel boundary conditions.
    pub fn apply_green(&self, z: &Field) -> Result<Field> {
        self.check(z)?;
        Ok(self.green_raw(z.values()))
    }

    pub(crate) fn green_raw(&self, z: &[f64]) -> Field {
        let mut coeffs = self.analyze(z);
        for (c, l) in coeffs.iter_mut().zip(&self.eigenvalues) {
            *c /= *l;
        }
        Field::from_vec(self.synthesize(coeffs, Synthesis::Sine))
    }

    /// Applies `-Δ + r⁻²`, the inverse of the Green operator on the discrete space.
    pub fn apply_helmholtz(&self, psi: &Field) -> Result<Field> {
        self.check(psi)?;
        let mut coeffs = self.analyze(psi.values());
        for (c, l) in coeffs.iter_mut().zip(&self.eigenvalues) {
            *c *= *l;
        }
        Ok(Field::from_vec(self.synthesize(coeffs, Synthesis::Sine)))
    }

    /// Spectral `∂/∂x₁`.
    pub fn d_dx1(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let n2 = self.spec.n2;
        let mut coeffs = self.analyze(f.values());
        for (k, block) in coeffs.chunks_exact_mut(n2).enumerate() {
            let ik = Complex64::new(0.0, self.kx[k]);
            for c in block {
                *c *= ik;
            }
        }
        Ok(Field::from_vec(self.synthesize(coeffs, Synthesis::Sine)))
    }

    /// Spectral `∂/∂x₂` of a field expanded in the wall sine basis.
    pub fn d_dx2(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let n2 = self.spec.n2;
        let l2 = self.spec.channel_width;
        let mut coeffs = self.analyze(f.values());
        for block in coeffs.chunks_exact_mut(n2) {
            for (idx, c) in block.iter_mut().enumerate() {
                *c *= (idx + 1) as f64 * PI / l2;
            }
        }
        Ok(Field::from_vec(self.synthesize(coeffs, Synthesis::Cosine)))
    }

    /// Spectral coefficients `a_{k,m}` with
    /// `f(i, j) = Σ_k Σ_m a_{k,m} e^{2πi k i/n₁} sin(πm(j+½)/n₂)`, exact on the grid.
    fn analyze(&self, values: &[f64]) -> Vec<Complex64> {
        let (n1, n2) = (self.spec.n1, self.spec.n2);
        let mut rows: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        if n1 > 1 {
            for row in rows.chunks_exact_mut(n1) {
                self.plans.fft1.process(row);
            }
        }

        let mut out = vec![Complex64::new(0.0, 0.0); n1 * n2];
        let mut ext = vec![Complex64::new(0.0, 0.0); 2 * n2];
        let half_i = Complex64::new(0.0, 0.5);
        for k in 0..n1 {
            for j in 0..n2 {
                let v = rows[j * n1 + k];
                ext[j] = v;
                ext[2 * n2 - 1 - j] = -v;
            }
            self.plans.fft2.process(&mut ext);
            for m in 1..=n2 {
                // DST-II: X_m = (i/2) e^{-iπm/2N} Y_m
                let x = half_i * self.plans.half_shift[m].conj() * ext[m];
                let w = if m == n2 { 1.0 } else { 2.0 } / n2 as f64;
                out[k * n2 + m - 1] = x * (w / n1 as f64);
            }
        }
        out
    }

    fn synthesize(&self, coeffs: Vec<Complex64>, kind: Synthesis) -> Vec<f64> {
        let (n1, n2) = (self.spec.n1, self.spec.n2);
        let zero = Complex64::new(0.0, 0.0);
        let mut rows = vec![zero; n1 * n2];
        let mut ext = vec![zero; 2 * n2];
        let sign = match kind {
            Synthesis::Sine => -1.0,
            Synthesis::Cosine => 1.0,
        };
        let scale = match kind {
            Synthesis::Sine => Complex64::new(0.0, -0.5), // 1/(2i)
            Synthesis::Cosine => Complex64::new(0.5, 0.0),
        };
        for k in 0..n1 {
            ext.iter_mut().for_each(|e| *e = zero);
            let block = &coeffs[k * n2..(k + 1) * n2];
            for m in 1..n2 {
                let a = block[m - 1];
                ext[m] += a * self.plans.half_shift[m];
                ext[2 * n2 - m] += a * self.plans.half_shift[m].conj() * sign;
            }
            let a = block[n2 - 1];
            ext[n2] += a * (self.plans.half_shift[n2] + self.plans.half_shift[n2].conj() * sign);
            self.plans.ifft2.process(&mut ext);
            for j in 0..n2 {
                rows[j * n1 + k] = ext[j] * scale;
            }
        }
        if n1 > 1 {
            for row in rows.chunks_exact_mut(n1) {
                self.plans.ifft1.process(row);
            }
        }
        rows.into_iter().map(|c| c.re).collect()
    }

    /// Deviation from x₁-independence: max over rows of the spread within the row.
    pub fn zonal_deviation(&self, f: &Field) -> f64 {
        f.values()
            .chunks_exact(self.spec.n1)
            .map(|row| {
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Row means, i.e. the zonal average as a function of `x₂`.
    pub fn zonal_mean(&self, f: &Field) -> Vec<f64> {
        f.values()
            .chunks_exact(self.spec.n1)
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }
}
