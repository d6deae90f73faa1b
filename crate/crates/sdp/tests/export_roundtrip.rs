use ltn_sdp::{LinearForm, MatExpr, SdpProblem};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn build(n: usize, data: &[f64], k: &[f64]) -> SdpProblem {
    let mut p = SdpProblem::new();
    let x = p.add_variable("X", n, n, true);
    let y = p.add_variable("Y", 1, n, false);
    let a = DMatrix::from_fn(n, n, |i, j| data[(i * n + j) % data.len()]);
    let xe = MatExpr::of_var(&x);
    let ye = MatExpr::of_var(&y);
    let off = ye.left_mul(&DMatrix::from_element(1, 1, k[0]));
    p.add_psd("blk", MatExpr::symmetric_blocks(&xe.left_mul(&a).add(&xe.right_mul(&a.transpose())).scale(0.5).add(&xe).sub(&xe.left_mul(&a)).add(&xe.left_mul(&a)), &off, &MatExpr::identity(1)));
    p.add_equality("y0", ye.view(0, 0, 1, 1));
    let mut obj = LinearForm::zero();
    obj.push(x.scalar_index(0, 0), k[1]);
    p.set_objective(obj, k[2]);
    p
}

proptest! {
    #[test]
    fn export_then_import_preserves_evaluation(
        n in 1usize..4,
        data in prop::collection::vec(-3.0f64..3.0, 1..10),
        k in prop::collection::vec(-2.0f64..2.0, 3),
        y in prop::collection::vec(-1.0f64..1.0, 20),
    ) {
        let p = build(n, &data, &k);
        let json = p.to_json();
        let q = SdpProblem::from_json(&json).unwrap();
        prop_assert_eq!(q.num_scalars(), p.num_scalars());
        let y = &y[..p.num_scalars()];
        for (a, b) in p.psd_constraints().iter().zip(q.psd_constraints()) {
            let d = (a.expr.eval(y) - b.expr.eval(y)).amax();
            prop_assert!(d < 1e-12);
        }
        for (a, b) in p.equality_constraints().iter().zip(q.equality_constraints()) {
            prop_assert!((a.expr.eval(y) - b.expr.eval(y)).amax() < 1e-12);
        }
        prop_assert!((p.objective_value(y) - q.objective_value(y)).abs() < 1e-12);
        prop_assert_eq!(q.to_json(), json);
    }
}

#[test]
fn import_rejects_bad_offsets() {
    let p = build(2, &[1.0, 2.0], &[1.0, 1.0, 0.0]);
    let json = p.to_json().replacen("\"offset\": 3", "\"offset\": 4", 1);
    assert!(SdpProblem::from_json(&json).is_err());
}
