mod common;

use mir_core::{l2_normalize, Matrix};
use proptest::prelude::*;

fn oracle_norm(row: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in row {
        s += x * x;
    }
    s.sqrt()
}

#[test]
fn random_rows_come_out_unit_norm() {
    let mut r = common::rng(11);
    let m = common::gaussian(&mut r, 8, 16);
    let e = l2_normalize(&m).unwrap();
    for i in 0..8 {
        assert!((oracle_norm(e.row(i)) - 1.0).abs() < 1e-7);
        // Same direction: input row is a positive multiple of the output row.
        let scale = oracle_norm(m.row(i));
        for (a, b) in e.row(i).iter().zip(m.row(i)) {
            assert!((a * scale - b).abs() < 1e-12);
        }
    }
}

fn matrix_strategy() -> impl Strategy<Value = Matrix> {
    (1usize..6, 1usize..9).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c)
            .prop_filter("rows away from zero", move |v| {
                v.chunks(c).all(|row| oracle_norm(row) > 1e-3)
            })
            .prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

proptest! {
    #[test]
    fn normalize_is_idempotent(m in matrix_strategy()) {
        let once = l2_normalize(&m).unwrap();
        let twice = l2_normalize(&once).unwrap();
        prop_assert!(once.max_abs_diff(&twice) < 1e-7);
    }

    #[test]
    fn normalize_ignores_positive_scale(m in matrix_strategy(), a in 1e-3f64..1e3) {
        let scaled = Matrix::new(m.rows(), m.cols(), m.as_slice().iter().map(|x| a * x).collect()).unwrap();
        let x = l2_normalize(&m).unwrap();
        let y = l2_normalize(&scaled).unwrap();
        prop_assert!(x.max_abs_diff(&y) < 1e-7);
    }
}
