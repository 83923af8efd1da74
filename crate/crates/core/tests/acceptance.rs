//! Acceptance criteria. Each criterion prints one PASS/FAIL line.
//!
//! The process fails when a criterion fails unless it is listed in
//! `KNOWN_FAILURES`; a listed criterion that starts passing also fails the run
//! so that the list stays accurate.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use holoeit_core::algebra::{
    admissibility_constraints, admissible_basis, criterion_residual, PartSource, SearchMode, SearchTolerances, TraceAlgebra,
    TraceAlgebraElement, DEFAULT_TOL_CRITERION,
};
use holoeit_core::boundary::{BoundaryTrace, DEFAULT_TOL_MEAN};
use holoeit_core::detector::{classify, Verdict, DEFAULT_TOL_CONST};
use holoeit_core::dn::{assemble_dn, DNOperator};
use holoeit_core::doubled::double_cover;
use holoeit_core::harmonic::Flavor;
use holoeit_core::pipeline::{estimate_tol_kernel, run_pipeline, ExperimentConfig};
use holoeit_core::reconstruct::{
    cloud_patch, embed_single_sheet, fit_conformal_metric, gelfand_embed, recover_annulus_modulus, shilov_check,
    DEFAULT_SHILOV_SLACK, DEFAULT_TOL_HERMITIAN,
};
use holoeit_core::surface::SurfaceMesh;
use holoeit_core::synthetic::{build_synthetic, DomainDescriptor, Hole, MetricField};

/// Criteria expected to fail; the analysis is kept with the project notes.
const KNOWN_FAILURES: &[usize] = &[3];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn annulus(h: f64) -> SurfaceMesh {
    build_synthetic(&DomainDescriptor::annulus(0.5, h)).expect("annulus mesh")
}

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

/// Steklov eigenvalue `i` of the annulus `r < |z| < 1`, with `L = ln(1/r)`.
fn annulus_eigenvalue(i: usize, l: f64, flavor: Flavor) -> f64 {
    let n = i.div_ceil(2) as f64;
    match (flavor, i) {
        (Flavor::Grounded, 0) => 1.0 / l,
        (Flavor::Isolated, 0) => 0.0,
        (Flavor::Grounded, _) => n / (n * l).tanh(),
        (Flavor::Isolated, _) => n * (n * l).tanh(),
    }
}

fn dn_spectra() -> Outcome {
    let start = Instant::now();
    let mesh = annulus(0.02);
    let l = 2f64.ln();
    // the closed forms at r = 1/2
    let grounded = [1.0 / l, 5.0 / 3.0, 5.0 / 3.0, 2.0 * 17.0 / 15.0, 2.0 * 17.0 / 15.0];
    let isolated = [0.0, 0.6, 0.6, 2.0 * 15.0 / 17.0, 2.0 * 15.0 / 17.0];
    let mut worst: f64 = 0.0;
    for (flavor, expect) in [(Flavor::Grounded, grounded), (Flavor::Isolated, isolated)] {
        let op = assemble_dn(&mesh, flavor).expect("assembly");
        let got = op.spectrum(5).values;
        for (i, (g, e)) in got.iter().zip(expect).enumerate() {
            assert!((e - annulus_eigenvalue(i, l, flavor)).abs() < 1e-12);
            // the isolated zero eigenvalue is compared against the unit scale
            let err = (g - e).abs() / e.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 0.01 && secs < 30.0, format!("worst relative error {worst:.2e}, {secs:.1} s"))
}

fn trichotomy() -> Outcome {
    let mut hits = 0;
    let mut notes = Vec::new();
    for h in [0.05, 0.025] {
        let cases = [
            (DomainDescriptor::disk(h), Flavor::Grounded, Verdict::NoHoles),
            (DomainDescriptor::annulus(0.5, h), Flavor::Grounded, Verdict::HolesGrounded),
            (DomainDescriptor::annulus(0.5, h), Flavor::Isolated, Verdict::HolesIsolated),
        ];
        for (desc, flavor, expect) in cases {
            let op = assemble_dn(&build_synthetic(&desc).expect("mesh"), flavor).expect("assembly");
            let tol = estimate_tol_kernel(&desc, &op, 16);
            match classify(&op, 16, tol, DEFAULT_TOL_CONST) {
                Ok(c) => {
                    let full = expect != Verdict::NoHoles || c.kernel_dim == 32;
                    if c.verdict == expect && full {
                        hits += 1;
                    } else {
                        notes.push(format!("h={h} {expect:?}: got {:?} kernel {}", c.verdict, c.kernel_dim));
                    }
                }
                Err(e) => notes.push(format!("h={h} {expect:?}: {e}")),
            }
        }
    }
    outcome(hits == 6, format!("{hits}/6 correct{}", notes.iter().map(|n| format!("; {n}")).collect::<String>()))
}

fn separation() -> Outcome {
    // observed order on the annulus
    let fs: [fn(f64) -> f64; 3] = [f64::cos, f64::sin, |t| (2.0 * t).cos()];
    let mut worst_order = f64::INFINITY;
    for flavor in [Flavor::Grounded, Flavor::Isolated] {
        let ops: Vec<DNOperator> = [0.04, 0.02].iter().map(|&h| assemble_dn(&annulus(h), flavor).expect("assembly")).collect();
        for f in fs {
            let r: Vec<f64> = ops
                .iter()
                .map(|op| criterion_residual(op, &theta_trace(op, f), DEFAULT_TOL_MEAN).expect("residual"))
                .collect();
            worst_order = worst_order.min((r[0] / r[1]).log2());
        }
    }

    // admissible versus period-violating traces on two holes
    let mut worst_ratio = f64::INFINITY;
    let mut details = Vec::new();
    let mesh = build_synthetic(&two_holes(0.04)).expect("two-hole mesh");
    for flavor in [Flavor::Grounded, Flavor::Isolated] {
        let op = assemble_dn(&mesh, flavor).expect("assembly");
        let grid = op.grid().clone();
        let modes: Vec<Vec<f64>> = grid.zero_mean_modes(4).iter().map(|m| grid.remove_mean(m)).collect();
        let c = admissibility_constraints(&op, &mesh, &modes).expect("constraints");
        let combine = |coeffs: &[f64]| {
            let mut v = vec![0.0; op.len()];
            for (a, m) in coeffs.iter().zip(&modes) {
                v.iter_mut().zip(m).for_each(|(x, y)| *x += a * y);
            }
            let n = grid.norm(&v);
            BoundaryTrace::new(grid.clone(), v.into_iter().map(|x| x / n).collect()).expect("trace")
        };
        // every candidate is kept so that all admissible residuals are seen
        let accept_all = SearchTolerances {
            tol_criterion: f64::MAX,
            ..SearchTolerances::default()
        };
        let admissible = admissible_basis(&op, 4, SearchMode::Validation(&mesh), accept_all).expect("basis").residuals;
        // minimum-norm mode combinations with prescribed constraint values
        let targets: Vec<Vec<f64>> = match flavor {
            Flavor::Grounded => vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, -1.0]],
            Flavor::Isolated => vec![vec![1.0]],
        };
        let pinv = c.pseudo_inverse(1e-12).expect("pseudo-inverse");
        let violating: Vec<f64> = targets
            .iter()
            .map(|t| {
                let x: DVector<f64> = &pinv * DVector::from_column_slice(t);
                criterion_residual(&op, &combine(x.as_slice()), DEFAULT_TOL_MEAN).expect("residual")
            })
            .collect();
        let adm_max = admissible.iter().cloned().fold(0.0, f64::max);
        let vio_min = violating.iter().cloned().fold(f64::INFINITY, f64::min);
        worst_ratio = worst_ratio.min(vio_min / adm_max);
        details.push(format!(
            "{}: admissible max {adm_max:.2e}, violating {:?}",
            flavor.name(),
            violating.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()
        ));
    }
    outcome(
        worst_order >= 1.8 && worst_ratio >= 100.0,
        format!("annulus order {worst_order:.2}, two-hole ratio {worst_ratio:.1}; {}", details.join("; ")),
    )
}

fn random_element(alg: &TraceAlgebra, basis: &[BoundaryTrace], rng: &mut ChaCha8Rng) -> TraceAlgebraElement {
    let mut part = || {
        let mut v = vec![0.0; alg.grid().len()];
        for b in basis {
            let a: f64 = rng.random_range(-1.0..1.0);
            v.iter_mut().zip(b.values()).for_each(|(x, y)| *x += a * y);
        }
        let c: f64 = rng.random_range(-1.0..1.0);
        let t = BoundaryTrace::new(alg.grid().clone(), v).expect("trace");
        alg.hermitian(&t, c).expect("admissible combination")
    };
    let w1 = part();
    let w2 = part();
    TraceAlgebraElement::from_parts(w1, w2).expect("same grid")
}

fn algebra_laws() -> Outcome {
    let mesh = annulus(0.04);
    let op = Arc::new(assemble_dn(&mesh, Flavor::Grounded).expect("assembly"));
    let basis = admissible_basis(&op, 4, SearchMode::Validation(&mesh), SearchTolerances::default()).expect("basis");
    let alg = TraceAlgebra::new(op, DEFAULT_TOL_MEAN, DEFAULT_TOL_CRITERION).expect("algebra");
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let elems: Vec<TraceAlgebraElement> = (0..20).map(|_| random_element(&alg, &basis.traces, &mut rng)).collect();
    let (mut star_err, mut norm_err, mut submult, mut closure): (f64, f64, f64, f64) = (0.0, 0.0, f64::NEG_INFINITY, 0.0);
    let mut failures = 0;
    for (i, a) in elems.iter().enumerate() {
        norm_err = norm_err.max((a.triple_norm() - a.star().triple_norm()).abs());
        for b in &elems[i..] {
            let ab = match alg.product(a, b) {
                Ok(p) => p,
                Err(_) => {
                    failures += 1;
                    continue;
                }
            };
            for part in [ab.w1(), ab.w2()] {
                if let PartSource::Product { residual } = part.source() {
                    closure = closure.max(*residual);
                }
            }
            let rev = alg.product(&b.star(), &a.star()).expect("product of stars");
            let lhs = ab.star().values();
            let scale = lhs.sup_norm().max(1.0);
            for (x, y) in lhs.values().iter().zip(rev.values().values()) {
                star_err = star_err.max((x - y).norm() / scale);
            }
            submult = submult.max(ab.triple_norm() - a.triple_norm() * b.triple_norm());
        }
    }
    let limit = 10.0 * DEFAULT_TOL_CRITERION;
    let passed = failures == 0 && star_err <= 1e-12 && norm_err == 0.0 && submult <= 1e-8 && closure <= limit;
    outcome(
        passed,
        format!(
            "star {star_err:.1e}, norm {norm_err:.1e}, submultiplicative excess {submult:.2e}, closure {closure:.2e} (limit {limit:.1e}), {failures} rejected"
        ),
    )
}

fn double_cover_checks() -> Outcome {
    let mut notes = Vec::new();
    let mut euler_ok = true;
    let mut metric_ok = true;
    for (name, desc) in [("annulus", DomainDescriptor::annulus(0.5, 0.05)), ("two holes", two_holes(0.05))] {
        let mesh = build_synthetic(&desc).expect("mesh");
        let d = double_cover(&mesh).expect("double");
        let (x, xx) = (mesh.euler_characteristic(), d.mesh().euler_characteristic());
        euler_ok &= xx == 2 * x;
        notes.push(format!("{name} euler {x} -> {xx}"));
        let nt = mesh.triangle_count();
        let tau = d.involution();
        for t in 0..nt {
            let tri = d.mesh().triangles()[t];
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                let plus = d.mesh().edge_length_in(t, tri[a], tri[b]);
                let minus = d.mesh().edge_length_in(t + nt, tau[tri[a]], tau[tri[b]]);
                metric_ok &= plus == minus;
            }
        }
    }
    // the explicit generator -i(z - r²/z)/(1 - r²) is real on |z| = r
    let h = 0.05;
    let mesh = annulus(h);
    let op = Arc::new(assemble_dn(&mesh, Flavor::Grounded).expect("assembly"));
    let alg = TraceAlgebra::new(op.clone(), DEFAULT_TOL_MEAN, 0.05).expect("algebra");
    let fs: [fn(f64) -> f64; 4] = [f64::cos, f64::sin, |t| (2.0 * t).cos(), |t| (2.0 * t).sin()];
    let gens: Vec<TraceAlgebraElement> = fs.iter().map(|f| alg.make_element(&theta_trace(&op, f), 0.0).expect("element")).collect();
    let d = double_cover(&mesh).expect("double");
    let cloud = gelfand_embed(&d, &gens, DEFAULT_TOL_HERMITIAN).expect("embedding");
    let seam_imag = d.seam().iter().map(|&s| cloud.value(s, 0).im.abs()).fold(0.0, f64::max);
    let seam_ok = seam_imag <= h * h;
    outcome(
        euler_ok && metric_ok && seam_ok,
        format!("{}, metric mirror exact {metric_ok}, seam |Im| {seam_imag:.1e} (h² = {:.1e})", notes.join(", "), h * h),
    )
}

fn shilov() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for flavor in [Flavor::Grounded, Flavor::Isolated] {
        let mesh = annulus(0.05);
        let op = Arc::new(assemble_dn(&mesh, flavor).expect("assembly"));
        let tol = SearchTolerances {
            tol_criterion: 0.05,
            ..SearchTolerances::default()
        };
        let basis = admissible_basis(&op, 4, SearchMode::Validation(&mesh), tol).expect("basis");
        let alg = TraceAlgebra::new(op, DEFAULT_TOL_MEAN, 0.05).expect("algebra");
        let gens: Vec<TraceAlgebraElement> = basis.traces.iter().map(|t| alg.make_element(t, 0.0).expect("element")).collect();
        let d = double_cover(&mesh).expect("double");
        let cloud = gelfand_embed(&d, &gens, DEFAULT_TOL_HERMITIAN).expect("embedding");
        let report = shilov_check(&cloud, DEFAULT_SHILOV_SLACK);
        ok &= report.passed() && report.checked == 14;
        notes.push(format!("{}: {} checked, worst ratio {:.9}", flavor.name(), report.checked, report.worst_ratio));
    }
    outcome(ok, notes.join(", "))
}

fn round_trip() -> Outcome {
    let l = 2f64.ln();
    let mut exact_err: f64 = 0.0;
    for flavor in [Flavor::Grounded, Flavor::Isolated] {
        let eigs: Vec<f64> = (0..11).map(|i| annulus_eigenvalue(i, l, flavor)).collect();
        let fit = recover_annulus_modulus(&eigs, flavor).expect("exact fit");
        exact_err = exact_err.max((fit.modulus - l).abs());
    }
    let start = Instant::now();
    let cfg = ExperimentConfig::new(DomainDescriptor::annulus(0.5, 0.05), Flavor::Grounded);
    let run = run_pipeline(&cfg);
    let secs = start.elapsed().as_secs_f64();
    let r = &run.report;
    let modulus = r.value("modulus").unwrap_or(f64::NAN);
    let components = r.value("components").unwrap_or(0.0);
    let discrepancy = r.value("round_trip_dn_discrepancy").unwrap_or(f64::INFINITY);
    let fem_err = (modulus - l).abs() / l;
    let passed = run.error.is_none() && fem_err <= 0.02 && exact_err <= 1e-9 && components == 2.0 && discrepancy <= 0.05 && secs < 120.0;
    outcome(
        passed,
        format!(
            "modulus {modulus:.5} ({:.2}%), exact {exact_err:.1e}, sheets {components}, DN discrepancy {discrepancy:.2e}, {secs:.1} s{}",
            100.0 * fem_err,
            run.error.map(|e| format!(", error: {e}")).unwrap_or_default()
        ),
    )
}

fn metric_fit() -> Outcome {
    let mut errs = Vec::new();
    for (metric, expect) in [
        (MetricField::Euclidean, Matrix2::identity()),
        (MetricField::Constant { g11: 1.0, g12: 0.0, g22: 4.0 }, Matrix2::new(0.5, 0.0, 0.0, 2.0)),
    ] {
        let mesh = build_synthetic(&DomainDescriptor::disk(0.04).with_metric(metric)).expect("mesh");
        let op = Arc::new(assemble_dn(&mesh, Flavor::Grounded).expect("assembly"));
        let alg = TraceAlgebra::new(op.clone(), DEFAULT_TOL_MEAN, 1.0).expect("algebra");
        let fs: [fn(f64) -> f64; 4] = [f64::cos, f64::sin, |t| (2.0 * t).cos(), |t| (2.0 * t).sin()];
        let gens: Vec<TraceAlgebraElement> = fs.iter().map(|f| alg.make_element(&theta_trace(&op, f), 0.0).expect("element")).collect();
        let cloud = embed_single_sheet(&mesh, &gens, DEFAULT_TOL_HERMITIAN).expect("embedding");
        let center = (0..mesh.vertex_count())
            .min_by(|&a, &b| {
                let n = |v: usize| mesh.vertices()[v][0].hypot(mesh.vertices()[v][1]);
                n(a).total_cmp(&n(b))
            })
            .expect("vertices");
        let (coords, c, fields) = cloud_patch(&cloud, &mesh, center, 0.3).expect("patch");
        let g = fit_conformal_metric(&coords, c, &fields).expect("fit").metric.matrix();
        assert!((g.determinant() - 1.0).abs() < 1e-9);
        errs.push((g - expect).norm() / expect.norm());
    }
    let flat = errs[0] * Matrix2::<f64>::identity().norm();
    outcome(flat <= 1e-2 && errs[1] <= 0.05, format!("flat {flat:.2e}, anisotropic {:.2}%", 100.0 * errs[1]))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("DN spectra oracle", dn_spectra),
        ("trichotomy", trichotomy),
        ("criterion separation", separation),
        ("algebra laws", algebra_laws),
        ("double cover", double_cover_checks),
        ("maximum modulus on the boundary", shilov),
        ("round trip", round_trip),
        ("metric fit", metric_fit),
    ];
    let mut unexpected = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        let o = run();
        let known = KNOWN_FAILURES.contains(&id);
        println!("criterion {id} {name}: {} ({})", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if o.passed == known {
            unexpected += 1;
            println!("criterion {id}: outcome differs from the expected {}", if known { "FAIL" } else { "PASS" });
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
