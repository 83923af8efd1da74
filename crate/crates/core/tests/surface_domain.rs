use std::collections::BTreeSet;
use std::io::Cursor;

use proptest::prelude::*;

use holoeit_core::doubled::double_cover;
use holoeit_core::surface::{read_surf2, validate_mesh, write_surf2, SurfaceMesh};
use holoeit_core::synthetic::{build_synthetic, DomainDescriptor, Hole};
use holoeit_core::Error;

fn loop_length(mesh: &SurfaceMesh, l: usize) -> f64 {
    mesh.loop_edge_lengths(l).unwrap().iter().sum()
}

fn sorted(t: [usize; 3]) -> [usize; 3] {
    let mut t = t;
    t.sort_unstable();
    t
}

#[test]
fn two_hole_domain_has_euler_characteristic_minus_one() {
    let d = DomainDescriptor::holes(
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
        0.04,
    );
    let mesh = build_synthetic(&d).unwrap();
    let report = validate_mesh(&mesh).into_result().unwrap();
    assert_eq!(report.loop_count, 3);
    assert_eq!(report.euler_characteristic, -1);
    let doubled = double_cover(&mesh).unwrap();
    assert_eq!(doubled.mesh().euler_characteristic(), -2);
    assert_eq!(doubled.mesh().boundary_loops().len(), 2);
}

#[test]
fn outer_length_approaches_two_pi() {
    let errs: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&h| {
            let mesh = build_synthetic(&DomainDescriptor::annulus(0.5, h)).unwrap();
            (loop_length(&mesh, mesh.gamma0_index()) - 2.0 * std::f64::consts::PI).abs()
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[2] < 1e-3, "{errs:?}");
}

#[test]
fn disk_cannot_be_doubled() {
    let mesh = build_synthetic(&DomainDescriptor::disk(0.1)).unwrap();
    assert!(matches!(double_cover(&mesh), Err(Error::Descriptor(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn double_cover_invariants(r in 0.3f64..0.7, h in 0.08f64..0.15) {
        let mesh = build_synthetic(&DomainDescriptor::annulus(r, h)).unwrap();
        let d = double_cover(&mesh).unwrap();
        let (pi, tau) = (d.projection(), d.involution());
        for v in 0..d.mesh().vertex_count() {
            prop_assert_eq!(tau[tau[v]], v);
            prop_assert_eq!(pi[tau[v]], pi[v]);
            prop_assert_eq!(tau[v] == v, d.is_seam(v));
        }
        for &s in d.seam() {
            prop_assert!(mesh.hole_loops().any(|l| l.contains(&pi[s])));
        }
        prop_assert_eq!(d.mesh().euler_characteristic(), 2 * mesh.euler_characteristic());

        // both copies of Γ0 have the source length
        let l0 = loop_length(&mesh, mesh.gamma0_index());
        for l in 0..d.mesh().boundary_loops().len() {
            prop_assert!((loop_length(d.mesh(), l) - l0).abs() <= 1e-12 * l0);
        }

        // one sheet with the seam re-attached is the source mesh
        let plus: BTreeSet<[usize; 3]> = d.plus_triangles().map(|t| sorted(*t)).collect();
        let source: BTreeSet<[usize; 3]> = mesh.triangles().iter().map(|t| sorted(*t)).collect();
        prop_assert_eq!(&plus, &source);
        let minus: BTreeSet<[usize; 3]> = d
            .mesh()
            .triangles()
            .iter()
            .filter(|t| !plus.contains(&sorted(**t)))
            .map(|t| sorted([pi[t[0]], pi[t[1]], pi[t[2]]]))
            .collect();
        prop_assert_eq!(&minus, &source);
    }

    #[test]
    fn surf2_round_trip_is_exact(r in 0.3f64..0.7, h in 0.1f64..0.2) {
        let mesh = build_synthetic(&DomainDescriptor::annulus(r, h)).unwrap();
        let text = write_surf2(&mesh).unwrap();
        let back = read_surf2(Cursor::new(text.as_bytes())).unwrap();
        prop_assert_eq!(back.vertices(), mesh.vertices());
        prop_assert_eq!(back.triangles(), mesh.triangles());
        prop_assert_eq!(back.boundary_loops(), mesh.boundary_loops());
        prop_assert_eq!(back.fingerprint(), mesh.fingerprint());
    }
}
