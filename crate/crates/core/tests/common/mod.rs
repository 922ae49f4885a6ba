//! Dense linear-algebra oracle for Gaussian-prior equilibria.
//!
//! With `i(y) = y²/2` the microcanonical problem is a quadratic objective on the
//! intersection of a quadric and a hyperplane. The oracle builds the Green
//! matrix from explicitly sampled eigenvectors, solves the stationarity system
//! `(I + βG)q = βGb − γ1` densely, fixes `γ` from the circulation and finds `β`
//! by bisection on the energy.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub struct Oracle {
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
    pub h: f64,
    /// Lower end of the β range where `I + βG` is positive on mean-zero fields.
    pub beta_low: f64,
}

fn x1_modes(n: usize) -> Vec<(f64, Vec<f64>)> {
    let idx = |f: &dyn Fn(f64) -> f64| (0..n).map(|i| f(i as f64)).collect::<Vec<f64>>();
    let mut modes = vec![(0.0, vec![1.0; n])];
    for k in 1..n.div_ceil(2) {
        let w = 2.0 * PI * k as f64 / n as f64;
        modes.push((k as f64, idx(&|i| (w * i).cos())));
        modes.push((k as f64, idx(&|i| (w * i).sin())));
    }
    if n > 1 && n.is_multiple_of(2) {
        modes.push((
            (n / 2) as f64,
            idx(&|i| if i % 2.0 == 0.0 { 1.0 } else { -1.0 }),
        ));
    }
    modes
}

impl Oracle {
    /// Oracle on the unit channel with `b = sin 2πx₂`.
    pub fn new(n1: usize, n2: usize, r: f64) -> Self {
        let n = n1 * n2;
        let mut g = DMatrix::zeros(n, n);
        for (k, u) in x1_modes(n1) {
            for m in 1..=n2 {
                let v: Vec<f64> = (0..n2)
                    .map(|j| (m as f64 * PI * (j as f64 + 0.5) / n2 as f64).sin())
                    .collect();
                let mut e = DVector::zeros(n);
                for j in 0..n2 {
                    for i in 0..n1 {
                        e[j * n1 + i] = u[i] * v[j];
                    }
                }
                e /= e.norm();
                let lambda = (2.0 * PI * k).powi(2) + (m as f64 * PI).powi(2) + r.powi(-2);
                g += &e * e.transpose() / lambda;
            }
        }
        let b = DVector::from_fn(n, |idx, _| {
            (2.0 * PI * (-0.5 + (idx / n1) as f64 / n2 as f64 + 0.5 / n2 as f64)).sin()
        });
        let p = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let pgp = &p * &g * &p;
        let gmax = SymmetricEigen::new(pgp).eigenvalues.max();
        Oracle {
            g,
            b,
            h: 1.0 / n as f64,
            beta_low: -1.0 / gmax,
        }
    }

    pub fn energy(&self, q: &DVector<f64>) -> f64 {
        let d = q - &self.b;
        0.5 * self.h * d.dot(&(&self.g * &d))
    }

    /// Stationary point at `β` with the circulation pinned to `Γ`.
    pub fn state(&self, beta: f64, circulation: f64) -> (DVector<f64>, f64) {
        let n = self.b.len();
        let a = DMatrix::identity(n, n) + &self.g * beta;
        let lu = a.lu();
        let q0 = lu.solve(&(&self.g * &self.b * beta)).unwrap();
        let q1 = lu.solve(&DVector::from_element(n, 1.0)).unwrap();
        let gamma = (self.h * q0.sum() - circulation) / (self.h * q1.sum());
        (q0 - q1 * gamma, gamma)
    }

    pub fn solve(&self, energy: f64, circulation: f64) -> (DVector<f64>, f64, f64) {
        let width = self.beta_low.abs();
        let (mut lo, mut hi) = (self.beta_low + 1e-9 * width, 1e6);
        let h = |beta: f64| self.energy(&self.state(beta, circulation).0) - energy;
        assert!(h(lo) > 0.0 && h(hi) < 0.0, "energy not bracketed");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let beta = 0.5 * (lo + hi);
        let (q, gamma) = self.state(beta, circulation);
        (q, beta, gamma)
    }
}

pub fn rel_l2(a: &[f64], b: &DVector<f64>) -> f64 {
    let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
    (num / b.norm_squared()).sqrt()
}
