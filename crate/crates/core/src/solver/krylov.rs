//! Matrix-free conjugate gradients.

pub(crate) struct CgOutcome {
    pub x: Vec<f64>,
    /// Set when a search direction with `pᵀAp ≤ 0` was met; `x` is the last iterate.
    pub negative_curvature: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` from `x = 0`, stopping at `‖r‖ ≤ rtol ‖b‖`.
pub(crate) fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    max_iters: usize,
) -> CgOutcome {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = rtol * rtol * rr;
    if rr == 0.0 {
        return CgOutcome {
            x,
            negative_curvature: false,
        };
    }
    for _ in 0..max_iters {
        let ap = apply(&p);
        let curvature = dot(&p, &ap);
        if curvature <= 1e-14 * dot(&p, &p) {
            return CgOutcome {
                x,
                negative_curvature: true,
            };
        }
        let alpha = rr / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new <= target {
            return CgOutcome {
                x,
                negative_curvature: false,
            };
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    CgOutcome {
        x,
        negative_curvature: false,
    }
}
