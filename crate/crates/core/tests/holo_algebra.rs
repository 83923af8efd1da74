use std::f64::consts::PI;
use std::sync::{Arc, LazyLock};

use nalgebra::DVector;
use proptest::prelude::*;

use holoeit_core::algebra::{
    admissibility_constraints, admissible_basis, criterion_residual, residual_grounded, residual_isolated, SearchMode,
    SearchTolerances, TraceAlgebra, TraceAlgebraElement, DEFAULT_TOL_CRITERION,
};
use holoeit_core::boundary::{BoundaryTrace, DEFAULT_TOL_MEAN};
use holoeit_core::dn::{assemble_dn, DNOperator};
use holoeit_core::harmonic::Flavor;
use holoeit_core::synthetic::{build_synthetic, DomainDescriptor, Hole};

struct Fixture {
    alg: TraceAlgebra,
    basis: Vec<BoundaryTrace>,
}

static GROUNDED: LazyLock<Fixture> = LazyLock::new(|| {
    let mesh = build_synthetic(&DomainDescriptor::annulus(0.5, 0.08)).unwrap();
    let op = Arc::new(assemble_dn(&mesh, Flavor::Grounded).unwrap());
    let tol = SearchTolerances {
        tol_criterion: 0.05,
        ..SearchTolerances::default()
    };
    let basis = admissible_basis(&op, 4, SearchMode::Validation(&mesh), tol).unwrap().traces;
    Fixture {
        alg: TraceAlgebra::new(op, DEFAULT_TOL_MEAN, 0.05).unwrap(),
        basis,
    }
});

fn two_holes(h: f64) -> DomainDescriptor {
    DomainDescriptor::holes(
        vec![
            Hole {
                center: [0.45, 0.0],
                radius: 0.2,
            },
            Hole {
                center: [-0.45, 0.0],
                radius: 0.2,
            },
        ],
        h,
    )
}

fn theta_trace(op: &DNOperator, f: impl Fn(f64) -> f64) -> BoundaryTrace {
    let l = op.grid().length();
    BoundaryTrace::from_fn(op.grid().clone(), |s| f(2.0 * PI * s / l))
}

/// Largest admissible residual and the residuals of minimum-norm traces with
/// unit hole periods.
fn two_hole_residuals(h: f64, flavor: Flavor) -> (f64, Vec<f64>) {
    let mesh = build_synthetic(&two_holes(h)).unwrap();
    let op = assemble_dn(&mesh, flavor).unwrap();
    let grid = op.grid().clone();
    let modes: Vec<Vec<f64>> = grid.zero_mean_modes(4).iter().map(|m| grid.remove_mean(m)).collect();
    let accept_all = SearchTolerances {
        tol_criterion: f64::MAX,
        ..SearchTolerances::default()
    };
    let admissible = admissible_basis(&op, 4, SearchMode::Validation(&mesh), accept_all).unwrap().residuals;
    let c = admissibility_constraints(&op, &mesh, &modes).unwrap();
    let rows = c.nrows();
    let pinv = c.pseudo_inverse(1e-12).unwrap();
    let violating = (0..rows)
        .map(|k| {
            let x: DVector<f64> = &pinv * DVector::from_fn(rows, |i, _| if i == k { 1.0 } else { 0.0 });
            let mut v = vec![0.0; op.len()];
            for (a, m) in x.iter().zip(&modes) {
                v.iter_mut().zip(m).for_each(|(y, z)| *y += a * z);
            }
            criterion_residual(&op, &BoundaryTrace::new(grid.clone(), v).unwrap(), DEFAULT_TOL_MEAN).unwrap()
        })
        .collect();
    (admissible.into_iter().fold(0.0, f64::max), violating)
}

#[test]
fn admissible_residuals_vanish_and_violations_persist() {
    for flavor in [Flavor::Grounded, Flavor::Isolated] {
        let (adm_coarse, vio_coarse) = two_hole_residuals(0.08, flavor);
        let (adm_fine, vio_fine) = two_hole_residuals(0.04, flavor);
        assert!(adm_fine < 0.5 * adm_coarse, "{flavor:?}: {adm_coarse:.2e} -> {adm_fine:.2e}");
        // one period constraint per hole, less the flux balance for the isolated flavor
        let constraints = if flavor == Flavor::Grounded { 2 } else { 1 };
        assert_eq!((vio_coarse.len(), vio_fine.len()), (constraints, constraints));
        for (c, f) in vio_coarse.iter().zip(&vio_fine) {
            match flavor {
                // a single nonzero hole period carries net flux and is prefiltered out
                Flavor::Grounded => assert!(c.is_infinite() && f.is_infinite(), "{c} {f}"),
                Flavor::Isolated => assert!(*f >= 0.5 * c && *f > 10.0 * adm_fine, "{c:.2e} -> {f:.2e}"),
            }
        }
    }
}

#[test]
fn disk_traces_are_all_admissible() {
    let mesh = build_synthetic(&DomainDescriptor::disk(0.05)).unwrap();
    let op = assemble_dn(&mesh, Flavor::Grounded).unwrap();
    for k in 1..=3 {
        let r = criterion_residual(&op, &theta_trace(&op, |t| (k as f64 * t).cos()), DEFAULT_TOL_MEAN).unwrap();
        assert!(r < DEFAULT_TOL_CRITERION, "mode {k}: {r:.2e}");
    }
}

fn random_element(fx: &Fixture, coeffs: &[f64]) -> TraceAlgebraElement {
    let part = |c: &[f64]| {
        let mut v = vec![0.0; fx.alg.grid().len()];
        for (a, b) in c.iter().zip(&fx.basis) {
            v.iter_mut().zip(b.values()).for_each(|(x, y)| *x += a * y);
        }
        fx.alg.hermitian(&BoundaryTrace::new(fx.alg.grid().clone(), v).unwrap(), c[fx.basis.len()]).unwrap()
    };
    let n = fx.basis.len() + 1;
    TraceAlgebraElement::from_parts(part(&coeffs[..n]), part(&coeffs[n..2 * n])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn criteria_scale_quadratically(coeffs in prop::collection::vec(-1.0f64..1.0, 3), alpha in 0.1f64..10.0) {
        let op = GROUNDED.alg.op();
        let f = theta_trace(op, |t| coeffs[0] * t.cos() + coeffs[1] * (2.0 * t).sin() + coeffs[2] * (3.0 * t).cos());
        let scaled = BoundaryTrace::new(f.grid().clone(), f.values().iter().map(|v| alpha * v).collect()).unwrap();
        let a = residual_grounded(op, &f, DEFAULT_TOL_MEAN).unwrap();
        let b = residual_grounded(op, &scaled, DEFAULT_TOL_MEAN).unwrap();
        prop_assert!((b.residual - alpha * alpha * a.residual).abs() <= 1e-10 * b.residual.max(1e-300));
        prop_assert!((b.relative - a.relative).abs() <= 1e-10 * a.relative.max(1e-300));

        let iso = assemble_dn(&build_synthetic(&DomainDescriptor::annulus(0.5, 0.15)).unwrap(), Flavor::Isolated).unwrap();
        let h = theta_trace(&iso, |t| coeffs[0] * t.cos() + coeffs[1] * (2.0 * t).sin() + coeffs[2] * (3.0 * t).cos());
        let hs = BoundaryTrace::new(h.grid().clone(), h.values().iter().map(|v| alpha * v).collect()).unwrap();
        let a = residual_isolated(&iso, &h).unwrap();
        let b = residual_isolated(&iso, &hs).unwrap();
        prop_assert!((b.c_h - alpha * a.c_h).abs() <= 1e-10 * b.c_h.abs().max(1e-300));
        prop_assert!((b.residual - alpha * alpha * a.residual).abs() <= 1e-10 * b.residual.max(1e-300));
        prop_assert!((b.relative - a.relative).abs() <= 1e-10 * a.relative.max(1e-300));
    }

    #[test]
    fn star_is_an_isometric_involution(x in prop::collection::vec(-1.0f64..1.0, 20), y in prop::collection::vec(-1.0f64..1.0, 20)) {
        let fx = &*GROUNDED;
        let n = 2 * (fx.basis.len() + 1);
        let a = random_element(fx, &x[..n]);
        let b = random_element(fx, &y[..n]);
        prop_assert_eq!(a.star().triple_norm(), a.triple_norm());
        let (back, orig) = (a.star().star().values(), a.values());
        prop_assert_eq!(back.values(), orig.values());
        let ab = fx.alg.product(&a, &b).unwrap();
        let ba = fx.alg.product(&b, &a).unwrap();
        let scale = ab.values().sup_norm().max(1.0);
        for (p, q) in ab.values().values().iter().zip(ba.values().values()) {
            prop_assert!((p - q).norm() <= 1e-12 * scale);
        }
        prop_assert!(ab.triple_norm() <= a.triple_norm() * b.triple_norm() * (1.0 + 1e-12));
    }
}
