//! Invariants of the entropy surface and its equivalence labels, on a real
//! 1×64 sweep and on synthetic surfaces.

use std::sync::OnceLock;

use proptest::prelude::*;

use qgeq::atlas::{
    sweep_entropy, Axis, EntropySurface, EquivalenceLabel, SweepOptions, Tolerances,
};
use qgeq::domain::{DeformationRadius, Grid, GridSpec};
use qgeq::functionals::Topography;
use qgeq::prior::PriorModel;
use qgeq::stability::analyze;

struct Sweep {
    grid: Grid,
    prior: PriorModel,
    surface: EntropySurface,
}

fn sweep() -> &'static Sweep {
    static CELL: OnceLock<Sweep> = OnceLock::new();
    CELL.get_or_init(|| {
        let grid = Grid::new(GridSpec::unit(1, 64, DeformationRadius::Finite(0.2))).unwrap();
        let prior = PriorModel::gamma_skew(0.1).unwrap();
        let topo = Topography::zonal_sine(&grid, 1.0);
        let surface = sweep_entropy(
            &grid,
            &prior,
            &topo,
            &Axis::left_open(0.0, 0.1, 0.0025),
            &Axis::closed(-2.0, 2.0, 0.05),
            &SweepOptions::default(),
        )
        .unwrap();
        Sweep {
            grid,
            prior,
            surface,
        }
    })
}

#[test]
fn hull_dominates_entropy() {
    let s = &sweep().surface;
    for (p, h) in s.points().iter().zip(s.concave_hull()) {
        if let (Some(e), Some(h)) = (p.entropy, h) {
            assert!(
                h >= e - 1e-8,
                "S** = {h} below S = {e} at ({}, {})",
                p.energy,
                p.circulation
            );
        }
    }
}

#[test]
fn labels_are_coherent_with_support_test() {
    let s = &sweep().surface;
    let tol = Tolerances::default();
    let labels = s.classify_all(&tol);
    let mut seen = [0usize; 2];
    for (p, label) in s.points().iter().zip(&labels) {
        match label {
            EquivalenceLabel::Full | EquivalenceLabel::Partial { .. } => {
                seen[0] += 1;
                assert!(
                    s.support_test(p.energy, p.circulation, &tol)
                        .unwrap()
                        .supported
                );
            }
            EquivalenceLabel::Nonequivalent { witness, violation } => {
                seen[1] += 1;
                let (i, j) = s.locate(witness.0, witness.1).unwrap();
                let w = s.point(i, j);
                let (sp, b, g) = (p.entropy.unwrap(), p.beta.unwrap(), p.gamma.unwrap());
                let plane = sp + b * (w.energy - p.energy) + g * (w.circulation - p.circulation);
                let excess = w.entropy.unwrap() - plane;
                assert!(excess > tol.support * (1.0 + sp.abs()));
                assert!((excess - violation).abs() <= 1e-12 * (1.0 + excess.abs()));
            }
            EquivalenceLabel::Inadmissible => assert!(!p.admissible),
            EquivalenceLabel::Unresolved => assert!(p.admissible && !p.converged),
        }
    }
    assert!(
        seen[0] > 0 && seen[1] > 0,
        "sweep should contain both kinds: {seen:?}"
    );
}

#[test]
fn shrinking_support_tolerance_keeps_nonequivalence() {
    let s = &sweep().surface;
    let mut previous: Option<Vec<EquivalenceLabel>> = None;
    for support in [1e-3, 1e-4, 1e-6, 1e-8, 1e-10] {
        let labels = s.classify_all(&Tolerances {
            support,
            ..Tolerances::default()
        });
        if let Some(prev) = &previous {
            for (a, b) in prev.iter().zip(&labels) {
                if a.name() == "nonequivalent" {
                    assert_eq!(b.name(), "nonequivalent");
                }
            }
        }
        previous = Some(labels);
    }
}

#[test]
fn full_equivalence_implies_nonnegative_second_variation() {
    let sw = sweep();
    let s = &sw.surface;
    let labels = s.classify_all(&Tolerances::default());
    let (ng, mut checked) = (s.circulations().len(), 0);
    for (k, label) in labels.iter().enumerate() {
        let Some(state) = s.state(k / ng, k % ng) else {
            continue;
        };
        let rep = analyze(state, &sw.prior, &sw.grid).unwrap();
        let tol = 1e-6 * rep.nu;
        if label.name() == "full" {
            assert!(
                rep.mu_full >= -tol,
                "full point with μ_full = {} at ({}, {})",
                rep.mu_full,
                state.energy,
                state.circulation
            );
        }
        if rep.mu_full < -10.0 * tol {
            assert_ne!(label.name(), "full");
        }
        checked += 1;
    }
    assert!(checked > 50);
}

fn bumpy(a: f64, c: f64, k: f64) -> impl Fn(f64, f64) -> Option<(f64, f64, f64)> {
    move |e, g| {
        let s = -a * e * e - g * g + c * (k * g).sin() * e;
        Some((
            s,
            -2.0 * a * e + c * (k * g).sin(),
            -2.0 * g + c * k * (k * g).cos() * e,
        ))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn monotone_inclusion_on_synthetic_surfaces(
        a in 0.1..3.0f64,
        c in 0.0..2.0f64,
        k in 1.0..8.0f64,
        t1 in -9.0..-2.0f64,
        shrink in 0.5..4.0f64,
    ) {
        let e = Axis::closed(0.0, 1.0, 0.1).values().unwrap();
        let g = Axis::closed(-1.0, 1.0, 0.1).values().unwrap();
        let s = EntropySurface::from_fn(e, g, bumpy(a, c, k));
        let loose = Tolerances { support: 10f64.powf(t1), ..Tolerances::default() };
        let tight = Tolerances { support: 10f64.powf(t1 - shrink), ..Tolerances::default() };
        for (x, y) in s.classify_all(&loose).iter().zip(s.classify_all(&tight)) {
            if x.name() == "nonequivalent" {
                prop_assert_eq!(y.name(), "nonequivalent");
            }
        }
    }
}
