use std::io::Cursor;
use std::sync::LazyLock;

use proptest::prelude::*;

use holoeit_core::dn::{assemble_dn, DNOperator};
use holoeit_core::harmonic::Flavor;
use holoeit_core::synthetic::{build_synthetic, DomainDescriptor, Hole};
use holoeit_core::Error;

static OPS: LazyLock<[DNOperator; 2]> = LazyLock::new(|| {
    let mesh = build_synthetic(&DomainDescriptor::annulus(0.5, 0.1)).unwrap();
    [assemble_dn(&mesh, Flavor::Grounded).unwrap(), assemble_dn(&mesh, Flavor::Isolated).unwrap()]
});

fn annulus_eigenvalue(i: usize, flavor: Flavor) -> f64 {
    let l = 2f64.ln();
    let n = i.div_ceil(2) as f64;
    match (flavor, i) {
        (Flavor::Grounded, 0) => 1.0 / l,
        (Flavor::Isolated, 0) => 0.0,
        (Flavor::Grounded, _) => n / (n * l).tanh(),
        (Flavor::Isolated, _) => n * (n * l).tanh(),
    }
}

#[test]
fn annulus_eigenvalues_converge_at_second_order() {
    for flavor in [Flavor::Grounded, Flavor::Isolated] {
        let errs: Vec<f64> = [0.08, 0.04]
            .iter()
            .map(|&h| {
                let op = assemble_dn(&build_synthetic(&DomainDescriptor::annulus(0.5, h)).unwrap(), flavor).unwrap();
                op.spectrum(7)
                    .values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v - annulus_eigenvalue(i, flavor)).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 1.8, "{flavor:?}: {errs:?} order {order:.2}");
    }
}

#[test]
fn grounded_constant_has_nonzero_response() {
    let two = DomainDescriptor::holes(
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
        0.08,
    );
    for desc in [DomainDescriptor::annulus(0.5, 0.08), two] {
        let op = assemble_dn(&build_synthetic(&desc).unwrap(), Flavor::Grounded).unwrap();
        let one = vec![1.0; op.len()];
        assert!(op.grid().inner(&op.apply(&one), &one) > 1.0);
    }
}

#[test]
fn csv_write_read_is_lossless() {
    for op in OPS.iter() {
        let back = DNOperator::from_csv(Cursor::new(op.to_csv())).unwrap();
        assert_eq!(back.flavor(), op.flavor());
        let diff = (back.matrix() - op.matrix()).abs().max();
        assert_eq!(diff, 0.0);
        assert_eq!(back.grid().weights(), op.grid().weights());
        assert_eq!(back.grid().length(), op.grid().length());
    }
}

#[test]
fn truncated_csv_names_the_line() {
    let text = OPS[0].to_csv();
    let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
    match DNOperator::from_csv(Cursor::new(cut)) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 11),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn symmetric_and_nonnegative(seed in prop::collection::vec(-1.0f64..1.0, 2..6), shift in 0usize..40) {
        for op in OPS.iter() {
            let grid = op.grid();
            let n = op.len();
            let f: Vec<f64> = (0..n).map(|i| seed[i % seed.len()] + (i as f64 * 0.37).sin()).collect();
            let g: Vec<f64> = (0..n).map(|i| f[(i + shift) % n] * (1.0 + 0.1 * i as f64 / n as f64)).collect();
            let lfg = grid.inner(&op.apply(&f), &g);
            let flg = grid.inner(&f, &op.apply(&g));
            let scale = grid.norm(&op.apply(&f)) * grid.norm(&g) + grid.norm(&f) * grid.norm(&op.apply(&g));
            prop_assert!((lfg - flg).abs() <= 1e-12 * scale.max(1e-300));
            let lff = grid.inner(&op.apply(&f), &f);
            prop_assert!(lff >= -1e-12 * grid.norm(&op.apply(&f)) * grid.norm(&f));
        }
    }
}
