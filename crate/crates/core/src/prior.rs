//! One-point prior distributions ρ on the small-scale vorticity.
//!
//! A prior is handled through its cumulant generating function
//! `f(η) = log ∫ e^{ηy} ρ(dy)` and the convex conjugate `i(y) = sup_η [ηy − f(η)]`.
//! `f'` is the mean-field vorticity–streamfunction map and `i` the entropy density.

use serde::{Deserialize, Serialize};

use crate::domain::{Field, Grid};
use crate::error::{Error, Result};

/// Open interval `(lower, upper)`; either end may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                value: x,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Gaussian,
    GammaSkew,
    Tabulated,
}

/// Value of the information functional; `Infinite` once any cell leaves the support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Information {
    Finite(f64),
    Infinite,
}

impl Information {
    pub fn finite(self) -> Option<f64> {
        match self {
            Information::Finite(v) => Some(v),
            Information::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Information::Infinite)
    }
}

const GAUSS_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GAUSS_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Density given at sample points and interpolated linearly between them.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedDensity {
    y: Vec<f64>,
    density: Vec<f64>,
    /// Cumulative mass at each sample point.
    cdf: Vec<f64>,
    mean: f64,
}

impl TabulatedDensity {
    /// Requires strictly increasing `y`, nonnegative density, and unit mass
    /// (trapezoid rule) within `1e-6`.
    pub fn new(y: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if y.len() != density.len() {
            return Err(Error::InvalidPrior(format!(
                "{} abscissae but {} density values",
                y.len(),
                density.len()
            )));
        }
        if y.len() < 3 {
            return Err(Error::InvalidPrior(
                "at least three samples are required".into(),
            ));
        }
        if y.windows(2).any(|w| !(w[1] > w[0])) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPrior(
                "abscissae must be finite and strictly increasing".into(),
            ));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidPrior(
                "density values must be finite and nonnegative".into(),
            ));
        }
        let mut cdf = Vec::with_capacity(y.len());
        cdf.push(0.0);
        for k in 1..y.len() {
            let seg = 0.5 * (density[k] + density[k - 1]) * (y[k] - y[k - 1]);
            cdf.push(cdf[k - 1] + seg);
        }
        let mass = *cdf.last().unwrap();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidPrior(format!(
                "density integrates to {mass}, expected 1 within 1e-6"
            )));
        }
        let mut table = TabulatedDensity {
            y,
            density,
            cdf,
            mean: 0.0,
        };
        table.mean = table.moments(0.0).1;
        Ok(table)
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.y
    }

    pub fn density_values(&self) -> &[f64] {
        &self.density
    }

    pub fn support(&self) -> Interval {
        Interval {
            lower: self.y[0],
            upper: *self.y.last().unwrap(),
        }
    }

    /// Linear interpolant of the density; zero outside the table.
    pub fn density_at(&self, y: f64) -> f64 {
        let (lo, hi) = (self.y[0], *self.y.last().unwrap());
        if y < lo || y > hi {
            return 0.0;
        }
        let k = self
            .y
            .partition_point(|&v| v <= y)
            .clamp(1, self.y.len() - 1);
        let t = (y - self.y[k - 1]) / (self.y[k] - self.y[k - 1]);
        self.density[k - 1] + t * (self.density[k] - self.density[k - 1])
    }

    /// `(f(η), f'(η), f''(η))` by Gauss–Legendre quadrature of the tilted
    /// interpolant, scaled to avoid overflow.
    fn moments(&self, eta: f64) -> (f64, f64, f64) {
        let shift = eta
            * if eta >= 0.0 {
                *self.y.last().unwrap()
            } else {
                self.y[0]
            };
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for k in 1..self.y.len() {
            let (a, b) = (self.y[k - 1], self.y[k]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (node, w) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
                let y = mid + half * node;
                let t = (y - a) / (b - a);
                let rho = self.density[k - 1] + t * (self.density[k] - self.density[k - 1]);
                let wt = w * half * rho * (eta * y - shift).exp();
                m0 += wt;
                m1 += wt * y;
                m2 += wt * y * y;
            }
        }
        let mean = m1 / m0;
        (
            m0.ln() + shift,
            mean,
            (m2 / m0 - mean * mean).max(f64::MIN_POSITIVE),
        )
    }

    /// Inverse of the tilted mean map: the `η` with `f'(η) = y`.
    fn tilt_for_mean(&self, y: f64) -> f64 {
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.moments(lo).1 > y {
            lo *= 2.0;
        }
        while self.moments(hi).1 < y {
            hi *= 2.0;
        }
        let mut eta = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (_, m, v) = self.moments(eta);
            let r = m - y;
            if r.abs() <= 1e-14 * (1.0 + y.abs()) {
                break;
            }
            if r > 0.0 {
                hi = eta;
            } else {
                lo = eta;
            }
            let newton = eta - r / v;
            eta = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 * (1.0 + eta.abs()) {
                break;
            }
        }
        eta
    }

    /// Inverse CDF of the interpolant.
    pub fn quantile(&self, u: f64) -> f64 {
        let target = u.clamp(0.0, 1.0) * *self.cdf.last().unwrap();
        let k = self
            .cdf
            .partition_point(|&c| c < target)
            .clamp(1, self.y.len() - 1);
        let (y0, y1) = (self.y[k - 1], self.y[k]);
        let (d0, d1) = (self.density[k - 1], self.density[k]);
        let need = target - self.cdf[k - 1];
        let h = y1 - y0;
        // mass over [y0, y0 + s]: d0 s + (d1 - d0) s² / (2h)
        let a = 0.5 * (d1 - d0) / h;
        let s = if a.abs() < 1e-300 {
            if d0 > 0.0 {
                need / d0
            } else {
                0.0
            }
        } else {
            let disc = (d0 * d0 + 4.0 * a * need).max(0.0);
            2.0 * need / (d0 + disc.sqrt())
        };
        (y0 + s.clamp(0.0, h)).min(y1)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Repr {
    Gaussian,
    Gamma { eps: f64 },
    Tabulated(TabulatedDensity),
}

/// Prior distribution represented by its cumulant generating function.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorModel {
    repr: Repr,
}

impl PriorModel {
    /// Standard normal prior: `f(η) = η²/2`, `i(y) = y²/2`.
    pub fn gaussian() -> Self {
        PriorModel {
            repr: Repr::Gaussian,
        }
    }

    /// Gamma prior normalized to mean 0, variance 1 and third moment `2ε`.
    /// `ε = 0` is the Gaussian limit.
    pub fn gamma_skew(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidPrior(format!(
                "skew parameter must be finite and nonnegative, got {epsilon}"
            )));
        }
        if epsilon == 0.0 {
            return Ok(Self::gaussian());
        }
        Ok(PriorModel {
            repr: Repr::Gamma { eps: epsilon },
        })
    }

    /// Outside the sampled range the rate is `+∞` (the table is not extrapolated).
    pub fn tabulated(y: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        Ok(PriorModel {
            repr: Repr::Tabulated(TabulatedDensity::new(y, density)?),
        })
    }

    pub fn kind(&self) -> PriorKind {
        match self.repr {
            Repr::Gaussian => PriorKind::Gaussian,
            Repr::Gamma { .. } => PriorKind::GammaSkew,
            Repr::Tabulated(_) => PriorKind::Tabulated,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self.repr {
            Repr::Gamma { eps } => Some(eps),
            Repr::Gaussian => Some(0.0),
            Repr::Tabulated(_) => None,
        }
    }

    pub fn table(&self) -> Option<&TabulatedDensity> {
        match &self.repr {
            Repr::Tabulated(t) => Some(t),
            _ => None,
        }
    }

    /// Mean `ȳ` of ρ, where `i` attains its minimum 0.
    pub fn mean(&self) -> f64 {
        match &self.repr {
            Repr::Tabulated(t) => t.mean,
            _ => 0.0,
        }
    }

    pub fn eta_domain(&self) -> Interval {
        match self.repr {
            Repr::Gamma { eps } => Interval {
                lower: f64::NEG_INFINITY,
                upper: 1.0 / eps,
            },
            _ => Interval::REAL_LINE,
        }
    }

    pub fn y_domain(&self) -> Interval {
        match &self.repr {
            Repr::Gaussian => Interval::REAL_LINE,
            Repr::Gamma { eps } => Interval {
                lower: -1.0 / eps,
                upper: f64::INFINITY,
            },
            Repr::Tabulated(t) => t.support(),
        }
    }

    /// A `δ` with `∫ exp(δ y²/2) ρ(dy) < ∞`, when one exists.
    /// The gamma family has an exponential tail and admits none.
    pub fn decay_delta(&self) -> Option<f64> {
        match self.repr {
            Repr::Gaussian => Some(0.5),
            Repr::Gamma { .. } => None,
            Repr::Tabulated(_) => Some(1.0),
        }
    }

    pub fn cgf(&self, eta: f64) -> Result<f64> {
        self.eta_domain().check(eta)?;
        Ok(match &self.repr {
            Repr::Gaussian => 0.5 * eta * eta,
            Repr::Gamma { eps } => -eta / eps - (-eps * eta).ln_1p() / (eps * eps),
            Repr::Tabulated(t) => t.moments(eta).0,
        })
    }

    /// `(f'(η), f''(η))`
    pub fn cgf_derivs(&self, eta: f64) -> Result<(f64, f64)> {
        self.eta_domain().check(eta)?;
        Ok(self.cgf_derivs_unchecked(eta))
    }

    fn cgf_derivs_unchecked(&self, eta: f64) -> (f64, f64) {
        match &self.repr {
            Repr::Gaussian => (eta, 1.0),
            Repr::Gamma { eps } => {
                let d = 1.0 / (1.0 - eps * eta);
                (eta * d, d * d)
            }
            Repr::Tabulated(t) => {
                let (_, m, v) = t.moments(eta);
                (m, v)
            }
        }
    }

    /// Mean-field map `f'(η)`, `None` outside the η-domain.
    pub fn mean_field(&self, eta: f64) -> Option<f64> {
        match &self.repr {
            Repr::Gaussian => Some(eta),
            Repr::Gamma { eps } => {
                let d = 1.0 - eps * eta;
                (d > 0.0).then(|| eta / d)
            }
            Repr::Tabulated(t) => eta.is_finite().then(|| t.moments(eta).1),
        }
    }

    /// `(f'(η), f''(η))`, `None` outside the η-domain.
    pub fn mean_field_derivs(&self, eta: f64) -> Option<(f64, f64)> {
        self.eta_domain()
            .contains(eta)
            .then(|| self.cgf_derivs_unchecked(eta))
    }

    pub fn rate(&self, y: f64) -> Result<f64> {
        self.y_domain().check(y)?;
        Ok(self.rate_unchecked(y))
    }

    fn rate_unchecked(&self, y: f64) -> f64 {
        match &self.repr {
            Repr::Gaussian => 0.5 * y * y,
            Repr::Gamma { eps } => y / eps - (eps * y).ln_1p() / (eps * eps),
            Repr::Tabulated(t) => {
                let eta = t.tilt_for_mean(y);
                (eta * y - t.moments(eta).0).max(0.0)
            }
        }
    }

    /// `(i'(y), i''(y))`
    pub fn rate_derivs(&self, y: f64) -> Result<(f64, f64)> {
        self.y_domain().check(y)?;
        Ok(self.rate_derivs_unchecked(y))
    }

    fn rate_derivs_unchecked(&self, y: f64) -> (f64, f64) {
        match &self.repr {
            Repr::Gaussian => (y, 1.0),
            Repr::Gamma { eps } => {
                let d = 1.0 / (1.0 + eps * y);
                (y * d, d * d)
            }
            Repr::Tabulated(t) => {
                let eta = t.tilt_for_mean(y);
                (eta, 1.0 / t.moments(eta).2)
            }
        }
    }

    /// `i(y)`, `None` outside the support.
    pub fn rate_opt(&self, y: f64) -> Option<f64> {
        self.y_domain().contains(y).then(|| self.rate_unchecked(y))
    }

    /// `(i'(y), i''(y))`, `None` outside the support.
    pub fn rate_derivs_opt(&self, y: f64) -> Option<(f64, f64)> {
        self.y_domain()
            .contains(y)
            .then(|| self.rate_derivs_unchecked(y))
    }

    /// `I(q) = ∫ i(q(x)) dx` by the midpoint rule.
    pub fn information(&self, grid: &Grid, q: &Field) -> Result<Information> {
        grid.check(q)?;
        Ok(self.information_raw(grid, q.values()))
    }

    pub(crate) fn information_raw(&self, grid: &Grid, q: &[f64]) -> Information {
        let mut total = 0.0;
        for &y in q {
            match self.rate_opt(y) {
                Some(v) => total += v,
                None => return Information::Infinite,
            }
        }
        Information::Finite(total * grid.cell_area())
    }
}

/// Numerical Legendre–Fenchel transform `sup_η [ηy − f(η)]`.
///
/// `f` returns `None` (or a non-finite value) outside its domain. The objective
/// is concave, so a doubling search brackets the maximizer and golden-section
/// search refines it. Divergence of the bracket is reported as unbounded.
pub fn legendre_conjugate_oracle(f: impl Fn(f64) -> Option<f64>, y: f64) -> Result<f64> {
    const LIMIT: f64 = 1e12;
    let g = |eta: f64| match f(eta) {
        Some(v) if v.is_finite() => eta * y - v,
        _ => f64::NEG_INFINITY,
    };

    let x0 = 0.0;
    let g0 = g(x0);
    if !g0.is_finite() {
        return Err(Error::InvalidArgument(
            "the function must be finite at 0".into(),
        ));
    }
    let mut best = g0;

    let mut step = 1.0;
    let dir = loop {
        let (gp, gm) = (g(x0 + step), g(x0 - step));
        if gp > g0 {
            break 1.0;
        }
        if gm > g0 {
            break -1.0;
        }
        if gp.is_finite() && gm.is_finite() {
            break 0.0;
        }
        // a domain edge is closer than `step`; shrink until both sides are finite
        step *= 0.5;
        if step < 1e-300 {
            break 0.0;
        }
    };

    let (mut lo, mut hi);
    if dir == 0.0 {
        lo = x0 - step;
        hi = x0 + step;
    } else {
        let mut prev = x0;
        let mut cur = x0 + dir * step;
        let mut gcur = g(cur);
        loop {
            step *= 2.0;
            let next = cur + dir * step;
            if next.abs() > LIMIT {
                return Err(Error::UnboundedConjugate(y));
            }
            let gnext = g(next);
            if gnext <= gcur {
                lo = prev.min(next);
                hi = prev.max(next);
                break;
            }
            prev = cur;
            cur = next;
            gcur = gnext;
        }
        best = best.max(gcur);
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..400 {
        if hi - lo <= 1e-13 * (1.0 + c.abs()) {
            break;
        }
        if gc >= gd {
            hi = d;
            d = c;
            gd = gc;
            c = hi - inv_phi * (hi - lo);
            gc = g(c);
        } else {
            lo = c;
            c = d;
            gc = gd;
            d = lo + inv_phi * (hi - lo);
            gd = g(d);
        }
        best = best.max(gc).max(gd);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DeformationRadius, GridSpec};
    use approx::assert_relative_eq;

    fn gamma() -> PriorModel {
        PriorModel::gamma_skew(0.1).unwrap()
    }

    #[test]
    fn gamma_cgf_values() {
        let p = gamma();
        assert_eq!(p.cgf(0.0).unwrap(), 0.0);
        let expect = -10.0 - 100.0 * 0.9f64.ln();
        assert_relative_eq!(p.cgf(1.0).unwrap(), expect, max_relative = 1e-13);
        assert!((p.cgf(1.0).unwrap() - 0.536052).abs() < 1e-6);
        assert!((p.cgf(1.0).unwrap() - 0.5).abs() <= 0.04);
    }

    #[test]
    fn cgf_domain_error_carries_boundary() {
        let err = gamma().cgf(10.0).unwrap_err();
        assert_eq!(
            err,
            Error::Domain {
                value: 10.0,
                lower: f64::NEG_INFINITY,
                upper: 10.0
            }
        );
        assert!(gamma().cgf_derivs(12.0).is_err());
    }

    #[test]
    fn gamma_derivatives() {
        let p = gamma();
        assert_eq!(p.cgf_derivs(0.0).unwrap(), (0.0, 1.0));
        let (d1, d2) = p.cgf_derivs(5.0).unwrap();
        assert_relative_eq!(d1, 10.0, max_relative = 1e-14);
        assert_relative_eq!(d2, 4.0, max_relative = 1e-14);
    }

    #[test]
    fn third_cumulant_is_twice_epsilon() {
        for eps in [0.1, 0.05, 0.3] {
            let p = PriorModel::gamma_skew(eps).unwrap();
            let h = 1e-4;
            let f3 = (p.cgf_derivs(h).unwrap().1 - p.cgf_derivs(-h).unwrap().1) / (2.0 * h);
            assert!((f3 - 2.0 * eps).abs() < 1e-6, "eps {eps}: {f3}");
        }
    }

    #[test]
    fn gamma_rate_values() {
        let p = gamma();
        assert_eq!(p.rate(0.0).unwrap(), 0.0);
        assert_eq!(p.rate_derivs(0.0).unwrap().1, 1.0);
        assert_relative_eq!(
            p.rate(1.0).unwrap(),
            10.0 - 100.0 * 1.1f64.ln(),
            max_relative = 1e-12
        );
        assert!((p.rate(1.0).unwrap() - 0.468982).abs() < 1e-6);
        assert_relative_eq!(p.rate_derivs(-5.0).unwrap().1, 4.0, max_relative = 1e-14);
        assert!(p.rate(-10.0).is_err());
        assert!(p.rate_opt(-10.5).is_none());
    }

    #[test]
    fn oracle_matches_gaussian_conjugate() {
        let p = PriorModel::gaussian();
        let v = legendre_conjugate_oracle(|e| p.cgf(e).ok(), 0.5).unwrap();
        assert!((v - 0.125).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_gamma_rate() {
        let p = gamma();
        let v = legendre_conjugate_oracle(|e| p.cgf(e).ok(), 1.0).unwrap();
        assert!((v - p.rate(1.0).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn oracle_blows_up_at_the_support_edge() {
        let p = gamma();
        let f = |e: f64| p.cgf(e).ok();
        let a = legendre_conjugate_oracle(f, -9.9).unwrap();
        let b = legendre_conjugate_oracle(f, -9.99).unwrap();
        let c = legendre_conjugate_oracle(f, -9.999).unwrap();
        assert!(a < b && b < c && c > 500.0);
        assert!(matches!(
            legendre_conjugate_oracle(f, -10.0),
            Err(Error::UnboundedConjugate(_))
        ));
        assert!(matches!(
            legendre_conjugate_oracle(f, -11.0),
            Err(Error::UnboundedConjugate(_))
        ));
    }

    #[test]
    fn gaussian_limit_expansion() {
        // the remainder is ε²/4 + O(ε³), so the ratio against ε² stays below 1
        for eps in [0.1, 0.05, 0.025] {
            let f = PriorModel::gamma_skew(eps).unwrap().cgf(1.0).unwrap();
            let ratio = (f - 0.5 - eps / 3.0).abs() / (eps * eps);
            assert!(ratio <= 1.0, "eps {eps}: ratio {ratio}");
        }
    }

    #[test]
    fn zero_skew_is_gaussian() {
        assert_eq!(
            PriorModel::gamma_skew(0.0).unwrap().kind(),
            PriorKind::Gaussian
        );
        assert!(PriorModel::gamma_skew(-0.1).is_err());
        assert!(gamma().decay_delta().is_none());
        assert!(PriorModel::gaussian().decay_delta().is_some());
    }

    #[test]
    fn information_of_constant_fields() {
        let grid = Grid::new(GridSpec::unit(4, 8, DeformationRadius::Finite(0.2))).unwrap();
        let p = gamma();
        assert_eq!(
            p.information(&grid, &grid.constant(0.0)).unwrap(),
            Information::Finite(0.0)
        );
        let i1 = p
            .information(&grid, &grid.constant(1.0))
            .unwrap()
            .finite()
            .unwrap();
        assert!((i1 - 0.468982).abs() < 1e-6);
        let mut q = grid.constant(0.0);
        q.values_mut()[3] = -10.0;
        assert_eq!(p.information(&grid, &q).unwrap(), Information::Infinite);
    }

    fn standard_normal_table(step: f64, half_width: f64) -> (Vec<f64>, Vec<f64>) {
        let n = (2.0 * half_width / step).round() as usize;
        let y: Vec<f64> = (0..=n).map(|k| -half_width + k as f64 * step).collect();
        let mut d: Vec<f64> = y
            .iter()
            .map(|v| (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .collect();
        // renormalize for the trapezoid rule
        let mass: f64 = (1..y.len()).map(|k| 0.5 * (d[k] + d[k - 1]) * step).sum();
        d.iter_mut().for_each(|v| *v /= mass);
        (y, d)
    }

    #[test]
    fn tabulated_gaussian_approximates_closed_form() {
        let (y, d) = standard_normal_table(0.01, 9.0);
        let p = PriorModel::tabulated(y, d).unwrap();
        assert_eq!(p.kind(), PriorKind::Tabulated);
        assert!(p.mean().abs() < 1e-10);
        for eta in [-1.5, -0.3, 0.0, 0.7, 2.0] {
            assert!(
                (p.cgf(eta).unwrap() - 0.5 * eta * eta).abs() < 1e-4,
                "{eta}"
            );
            let (m, v) = p.cgf_derivs(eta).unwrap();
            assert!((m - eta).abs() < 1e-4 && (v - 1.0).abs() < 1e-3);
        }
        for y in [-2.0, 0.3, 1.5] {
            assert!((p.rate(y).unwrap() - 0.5 * y * y).abs() < 1e-4, "{y}");
            let (d1, _) = p.rate_derivs(y).unwrap();
            assert!((p.mean_field(d1).unwrap() - y).abs() < 1e-10);
        }
        assert!(p.rate(9.5).is_err());
    }

    #[test]
    fn tabulated_rejects_bad_mass() {
        let (y, mut d) = standard_normal_table(0.05, 8.0);
        d.iter_mut().for_each(|v| *v *= 1.01);
        assert!(matches!(
            PriorModel::tabulated(y, d),
            Err(Error::InvalidPrior(_))
        ));
        assert!(PriorModel::tabulated(vec![0.0, 1.0, 0.5], vec![1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn tabulated_quantile_inverts_cdf() {
        let p = PriorModel::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]).unwrap();
        let t = p.table().unwrap();
        assert!((t.quantile(0.5) - 1.0).abs() < 1e-12);
        // mass below y on the rising edge is y²/2
        assert!((t.quantile(0.125) - 0.5).abs() < 1e-12);
        assert!((t.quantile(0.875) - 1.5).abs() < 1e-12);
    }
}
