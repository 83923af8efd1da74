use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;

use holoeit_core::algebra::{admissible_basis, SearchMode, SearchTolerances, TraceAlgebra};
use holoeit_core::boundary::{BoundaryTrace, DEFAULT_TOL_MEAN};
use holoeit_core::dn::assemble_dn;
use holoeit_core::doubled::double_cover;
use holoeit_core::harmonic::Flavor;
use holoeit_core::pipeline::{generators_from_basis, run_pipeline, ExperimentConfig};
use holoeit_core::reconstruct::{
    find_seam, gelfand_embed, recover_annulus_modulus, seam_agreement, shilov_check, DEFAULT_SHILOV_SLACK,
    DEFAULT_TOL_HERMITIAN,
};
use holoeit_core::synthetic::{build_synthetic, DomainDescriptor, Hole};

const COARSE_TOL: f64 = 0.05;

#[test]
fn two_hole_cloud_involution_and_seam() {
    let desc = DomainDescriptor::holes(
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
        0.06,
    );
    let mesh = build_synthetic(&desc).unwrap();
    for flavor in [Flavor::Grounded, Flavor::Isolated] {
        let op = Arc::new(assemble_dn(&mesh, flavor).unwrap());
        let tol = SearchTolerances {
            tol_criterion: COARSE_TOL,
            ..SearchTolerances::default()
        };
        let basis = admissible_basis(&op, 4, SearchMode::Validation(&mesh), tol).unwrap();
        let alg = TraceAlgebra::new(op, DEFAULT_TOL_MEAN, COARSE_TOL).unwrap();
        let gens = generators_from_basis(&alg, &basis.traces).unwrap();
        let d = double_cover(&mesh).unwrap();
        let cloud = gelfand_embed(&d, &gens, DEFAULT_TOL_HERMITIAN).unwrap();
        let tau = cloud.involution();
        for p in 0..cloud.len() {
            assert_eq!(tau[tau[p]], p);
            assert_eq!(tau[p], d.involution()[p]);
            assert_eq!(cloud.hermitian_flags()[p], d.is_seam(p));
        }
        let seam = find_seam(&cloud, DEFAULT_TOL_HERMITIAN).unwrap();
        assert_eq!(seam_agreement(&seam, d.seam()), (1.0, 1.0));
        assert!(shilov_check(&cloud, DEFAULT_SHILOV_SLACK).passed());
    }
}

#[test]
fn extension_is_conjugate_laurent_form_on_the_other_sheet() {
    let mesh = build_synthetic(&DomainDescriptor::annulus(0.5, 0.05)).unwrap();
    let op = Arc::new(assemble_dn(&mesh, Flavor::Grounded).unwrap());
    let alg = TraceAlgebra::new(op, DEFAULT_TOL_MEAN, COARSE_TOL).unwrap();
    let l = alg.grid().length();
    let theta = |k: f64, sine: bool| {
        BoundaryTrace::from_fn(alg.grid().clone(), move |s| {
            let t = k * 2.0 * std::f64::consts::PI * s / l;
            if sine { t.sin() } else { t.cos() }
        })
    };
    let gens: Vec<_> = [(1.0, false), (1.0, true), (2.0, false), (2.0, true)]
        .iter()
        .map(|&(k, s)| alg.make_element(&theta(k, s), 0.0).unwrap())
        .collect();
    let d = double_cover(&mesh).unwrap();
    let cloud = gelfand_embed(&d, &gens, DEFAULT_TOL_HERMITIAN).unwrap();
    // the harmonic extension of cos θ vanishing on |z| = 1/2 is Re of this Laurent polynomial
    let r2 = 0.25;
    let mut worst: f64 = 0.0;
    for v in 0..d.mesh().vertex_count() {
        let p = mesh.vertices()[d.projection()[v]];
        let z = Complex64::new(p[0], p[1]);
        let w = -Complex64::i() * (z - r2 / z) / (1.0 - r2);
        let expect = if v < d.source_vertex_count() { w } else { w.conj() };
        worst = worst.max((cloud.value(v, 0) - expect).norm());
    }
    assert!(worst < 2e-2, "{worst}");
}

#[test]
fn isolated_pipeline_recovers_the_annulus() {
    let cfg = ExperimentConfig::new(DomainDescriptor::annulus(0.5, 0.06), Flavor::Isolated);
    let run = run_pipeline(&cfg);
    assert!(run.error.is_none(), "{:?}", run.error);
    let r = &run.report;
    assert_eq!(r.value("components"), Some(2.0));
    let l = 2f64.ln();
    let modulus = r.value("modulus").unwrap();
    assert!((modulus - l).abs() < 0.02 * l, "{modulus}");
    assert!(r.value("round_trip_dn_discrepancy").unwrap() < 0.05);
}

fn eigenvalue(i: usize, l: f64, flavor: Flavor) -> f64 {
    let n = i.div_ceil(2) as f64;
    match (flavor, i) {
        (Flavor::Grounded, 0) => 1.0 / l,
        (Flavor::Isolated, 0) => 0.0,
        (Flavor::Grounded, _) => n * (n * l).cosh() / (n * l).sinh(),
        (Flavor::Isolated, _) => n * (n * l).sinh() / (n * l).cosh(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn modulus_from_exact_spectrum(l in 0.2f64..2.0, count in 9usize..15) {
        for flavor in [Flavor::Grounded, Flavor::Isolated] {
            let eigs: Vec<f64> = (0..count).map(|i| eigenvalue(i, l, flavor)).collect();
            let fit = recover_annulus_modulus(&eigs, flavor).unwrap();
            prop_assert!((fit.modulus - l).abs() <= 1e-9, "{:?} {} {}", flavor, l, fit.modulus);
        }
    }
}
