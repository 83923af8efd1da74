use std::io::Cursor;

use holoeit_core::detector::{classify, recover_boundary_length, Verdict, DEFAULT_TOL_CONST, FALLBACK_TOL_KERNEL};
use holoeit_core::dn::{assemble_dn, DNOperator};
use holoeit_core::harmonic::Flavor;
use holoeit_core::pipeline::estimate_tol_kernel;
use holoeit_core::synthetic::{build_synthetic, DomainDescriptor, MetricField};
use holoeit_core::Error;

fn op(desc: &DomainDescriptor, flavor: Flavor) -> DNOperator {
    assemble_dn(&build_synthetic(desc).unwrap(), flavor).unwrap()
}

#[test]
fn verdicts_are_stable_under_refinement() {
    for h in [0.08, 0.04] {
        let cases = [
            (DomainDescriptor::disk(h), Flavor::Grounded, Verdict::NoHoles),
            (DomainDescriptor::annulus(0.5, h), Flavor::Grounded, Verdict::HolesGrounded),
            (DomainDescriptor::annulus(0.5, h), Flavor::Isolated, Verdict::HolesIsolated),
        ];
        for (desc, flavor, expect) in cases {
            let o = op(&desc, flavor);
            let tol = estimate_tol_kernel(&desc, &o, 16);
            assert!(tol > 0.0 && tol <= FALLBACK_TOL_KERNEL);
            let c = classify(&o, 16, tol, DEFAULT_TOL_CONST).unwrap();
            assert_eq!(c.verdict, expect, "h={h} {desc:?}");
            if expect == Verdict::NoHoles {
                assert_eq!(c.kernel_dim, 32);
            }
        }
    }
}

#[test]
fn classification_depends_only_on_matrix_and_weights() {
    let o = op(&DomainDescriptor::annulus(0.5, 0.08), Flavor::Isolated);
    let copy = DNOperator::from_csv(Cursor::new(o.to_csv())).unwrap();
    let a = classify(&o, 16, FALLBACK_TOL_KERNEL, DEFAULT_TOL_CONST).unwrap();
    let b = classify(&o, 16, FALLBACK_TOL_KERNEL, DEFAULT_TOL_CONST).unwrap();
    let c = classify(&copy, 16, FALLBACK_TOL_KERNEL, DEFAULT_TOL_CONST).unwrap();
    for other in [&b, &c] {
        assert_eq!(a.verdict, other.verdict);
        assert_eq!(a.kernel_dim, other.kernel_dim);
        assert_eq!(a.singular_values, other.singular_values);
        assert_eq!(a.lambda1_norm.to_bits(), other.lambda1_norm.to_bits());
    }
}

#[test]
fn zero_threshold_is_indeterminate() {
    let o = op(&DomainDescriptor::disk(0.1), Flavor::Grounded);
    assert!(matches!(classify(&o, 16, 0.0, DEFAULT_TOL_CONST), Err(Error::Indeterminate { .. })));
}

#[test]
fn conformal_factor_does_not_change_the_verdict() {
    let desc = DomainDescriptor::disk(0.05).with_metric(MetricField::GaussianConformal {
        amplitude: 1.0,
        center: [0.1, 0.0],
        width: 0.4,
    });
    let o = op(&desc, Flavor::Grounded);
    let c = classify(&o, 16, FALLBACK_TOL_KERNEL, DEFAULT_TOL_CONST).unwrap();
    assert_eq!(c.verdict, Verdict::NoHoles);
}

#[test]
fn boundary_length_from_the_spectrum() {
    let o = op(&DomainDescriptor::disk(0.03), Flavor::Grounded);
    let l = recover_boundary_length(&o, 41).unwrap();
    assert!((l - o.grid().length()).abs() < 0.01 * o.grid().length(), "{l}");
    let scaled = o.rescaled(2.0).unwrap();
    let l2 = recover_boundary_length(&scaled, 41).unwrap();
    assert!((l2 - scaled.grid().length()).abs() < 0.01 * scaled.grid().length(), "{l2}");
}
