use std::sync::{Arc, LazyLock};

use proptest::prelude::*;

use holoeit_core::boundary::{BoundaryGrid, BoundaryTrace};
use holoeit_core::harmonic::{hole_periods, solve_grounded, solve_isolated, Flavor, ForwardSolver, ScalarField};
use holoeit_core::surface::SurfaceMesh;
use holoeit_core::synthetic::{build_synthetic, DomainDescriptor};

static ANNULUS: LazyLock<SurfaceMesh> = LazyLock::new(|| build_synthetic(&DomainDescriptor::annulus(0.5, 0.1)).unwrap());

fn polar(p: [f64; 3]) -> (f64, f64) {
    (p[0].hypot(p[1]), p[1].atan2(p[0]))
}

/// Γ0 data taken from the nodal angles.
fn gamma0_trace(mesh: &SurfaceMesh, f: impl Fn(f64) -> f64) -> BoundaryTrace {
    let grid = Arc::new(BoundaryGrid::from_mesh(mesh).unwrap());
    let values = mesh.gamma0().iter().map(|&v| f(polar(mesh.vertices()[v]).1)).collect();
    BoundaryTrace::new(grid, values).unwrap()
}

fn max_error(mesh: &SurfaceMesh, u: &ScalarField, exact: impl Fn(f64, f64) -> f64) -> f64 {
    mesh.vertices()
        .iter()
        .zip(u.values())
        .map(|(p, v)| {
            let (r, t) = polar(*p);
            (v - exact(r, t)).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn analytic_examples_converge_at_second_order() {
    type Case = (DomainDescriptor, Flavor, fn(f64) -> f64, fn(f64, f64) -> f64);
    let cases: [Case; 3] = [
        (DomainDescriptor::annulus(0.5, 1.0), Flavor::Grounded, f64::cos, |r, t| 4.0 / 3.0 * (r - 0.25 / r) * t.cos()),
        (DomainDescriptor::annulus(0.5, 1.0), Flavor::Isolated, f64::cos, |r, t| 0.8 * (r + 0.25 / r) * t.cos()),
        (DomainDescriptor::disk(1.0), Flavor::Grounded, f64::cos, |r, t| r * t.cos()),
    ];
    for (desc, flavor, data, exact) in cases {
        let errs: Vec<f64> = [0.08, 0.04]
            .iter()
            .map(|&h| {
                let mut d = desc.clone();
                d.h = h;
                let mesh = build_synthetic(&d).unwrap();
                let f = gamma0_trace(&mesh, data);
                let u = match flavor {
                    Flavor::Grounded => solve_grounded(&mesh, &f).unwrap(),
                    Flavor::Isolated => solve_isolated(&mesh, &f).unwrap(),
                };
                max_error(&mesh, &u, exact)
            })
            .collect();
        // linear data are reproduced exactly by P1 elements
        if errs[0] < 1e-12 {
            assert!(errs[1] < 1e-12, "{errs:?}");
            continue;
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 1.8, "{desc:?} {flavor:?}: {errs:?} order {order:.2}");
    }
}

#[test]
fn trivial_solutions() {
    let mesh = &*ANNULUS;
    let zero = solve_grounded(mesh, &gamma0_trace(mesh, |_| 0.0)).unwrap();
    assert!(zero.values().iter().all(|&v| v == 0.0));
    let one = solve_isolated(mesh, &gamma0_trace(mesh, |_| 1.0)).unwrap();
    assert!(one.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    assert!(hole_periods(mesh, &one).unwrap().iter().all(|p| p.abs() < 1e-10));
}

#[test]
fn grounded_constant_has_logarithmic_flux() {
    let mesh = build_synthetic(&DomainDescriptor::annulus(0.5, 0.04)).unwrap();
    let u = solve_grounded(&mesh, &gamma0_trace(&mesh, |_| 1.0)).unwrap();
    let p = hole_periods(&mesh, &u).unwrap();
    let expect = -2.0 * std::f64::consts::PI / 2f64.ln();
    assert!((p[0] - expect).abs() < 1e-2 * expect.abs(), "{p:?}");
    let c = solve_grounded(&mesh, &gamma0_trace(&mesh, f64::cos)).unwrap();
    let pc = hole_periods(&mesh, &c).unwrap()[0];
    assert!(pc.abs() < 1e-6 * expect.abs(), "{pc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn maximum_principle_and_flux_balance(coeffs in prop::collection::vec(-1.0f64..1.0, 8), offset in -1.0f64..1.0) {
        let mesh = &*ANNULUS;
        let data = |t: f64| {
            offset + coeffs.chunks(2).enumerate().map(|(k, c)| {
                let n = (k + 1) as f64;
                c[0] * (n * t).cos() + c[1] * (n * t).sin()
            }).sum::<f64>()
        };
        let f = gamma0_trace(mesh, data);
        let (lo, hi) = f.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for flavor in [Flavor::Grounded, Flavor::Isolated] {
            let solver = ForwardSolver::new(mesh, flavor).unwrap();
            let u = solver.solve(&f).unwrap();
            // grounded holes carry the boundary value 0
            let (lo, hi) = match flavor {
                Flavor::Grounded => (lo.min(0.0), hi.max(0.0)),
                Flavor::Isolated => (lo, hi),
            };
            let slack = 1e-12 * (hi - lo).max(1.0);
            prop_assert!(u.values().iter().all(|&v| v >= lo - slack && v <= hi + slack));

            let outer: f64 = solver.dirichlet().residual_at(u.values(), mesh.gamma0()).iter().sum();
            let holes: f64 = hole_periods(mesh, &u).unwrap().iter().sum();
            let scale = outer.abs().max(1.0);
            prop_assert!((outer + holes).abs() <= 1e-9 * scale, "{} {}", outer, holes);
        }
    }
}
