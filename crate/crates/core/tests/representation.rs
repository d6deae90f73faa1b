mod common;

use ltn_core::closed_loop::{eval_switch_matrix_ff, eval_switch_matrix_integral};
use ltn_core::data::representation_step;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

/// The data-based closed loop must reproduce `x+ = alpha x + [W x + B u]`
/// with `u = K1 x + K r` for any gains once the data are rich.
#[test]
fn data_representation_matches_the_plant() {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = common::rng(100 + seed);
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=2);
        let (sys, _, dm) = common::rich_instance(&mut rng, n, m, 20);
        let k1 = common::random_matrix(&mut rng, m, n, 1.0);
        let k = common::random_matrix(&mut rng, m, n, 1.0);
        let zm = dm.z_times(&dm.solve_m(&k1).unwrap());
        let zn = dm.z_times(&dm.solve_n(&k).unwrap());
        let ub = sys.state_upper_bound();
        for _ in 0..100 {
            let x = common::random_state(&mut rng, n, ub);
            let r = common::random_state(&mut rng, n, ub);
            let u = &k1 * &x + &k * &r;
            let truth = sys.step(&x, &u).unwrap();
            let data = representation_step(sys.alpha(), sys.s(), &zm, &zn, &x, &r).unwrap();
            let err = (&truth - &data).amax();
            worst = worst.max(err);
            checked += 1;
        }
    }
    assert_eq!(checked, 5000);
    assert!(worst <= 1e-8, "worst error {worst:.3e}");
}

#[test]
fn zm_and_zn_equal_the_model_matrices() {
    let mut rng = common::rng(9);
    let (sys, _, dm) = common::rich_instance(&mut rng, 3, 2, 20);
    let k1 = common::random_matrix(&mut rng, 2, 3, 1.0);
    let k = common::random_matrix(&mut rng, 2, 3, 1.0);
    let zm = dm.z_times(&dm.solve_m(&k1).unwrap());
    let zn = dm.z_times(&dm.solve_n(&k).unwrap());
    assert!((zm - (sys.w() + sys.b() * &k1)).amax() < 1e-9);
    assert!((zn - sys.b() * &k).amax() < 1e-9);
}

#[test]
fn solves_refuse_poor_data() {
    let mut rng = common::rng(3);
    let sys = common::random_system(&mut rng, 3, 2);
    let ds = ltn_core::data::collect_random_dataset(&sys, 3, (0.0, sys.state_upper_bound()), (0.0, 1.0), 1, None).unwrap();
    let dm = ltn_core::data::build_data_matrices(&ds, sys.alpha(), sys.s(), 1e-9).unwrap();
    assert!(matches!(dm.solve_m(&DMatrix::zeros(2, 3)), Err(ltn_core::LtnError::Richness(_))));
}

/// Switching entries stay in `(0, 1]` for any offset when the equilibrium
/// drive `(1 - alpha) r` is strictly inside `(0, s)`.
#[test]
fn switching_entries_stay_in_the_unit_interval() {
    let mut rng = common::rng(77);
    let mut evaluations = 0usize;
    while evaluations < 100_000 {
        let n = rng.random_range(1..=6);
        let alpha = rng.random_range(0.3..0.95);
        let s = rng.random_range(0.2..1.0);
        let ub = s / (1.0 - alpha);
        let r = DVector::from_fn(n, |_, _| rng.random_range(0.01..0.99) * ub);
        let v = DVector::from_fn(n, |_, _| {
            let scale = 10f64.powi(rng.random_range(-6..=2));
            rng.random_range(-1.0..1.0) * scale * s
        });
        let ff = eval_switch_matrix_ff(&v, &r, alpha, s).unwrap();
        let int = eval_switch_matrix_integral(&v, &r, alpha, s).unwrap();
        for d in ff.iter().chain(int.iter()) {
            assert!(*d > 0.0 && *d <= 1.0, "entry {d} out of range");
        }
        evaluations += 2 * n;
    }
}

#[test]
fn switching_entry_reproduces_the_clamp() {
    let (alpha, s) = (0.8, 0.5);
    let r = DVector::from_vec(vec![1.0, 2.0, 0.5]);
    let v = DVector::from_vec(vec![0.05, 1.0, -0.9]);
    let d = eval_switch_matrix_ff(&v, &r, alpha, s).unwrap();
    assert_eq!(d[0], 1.0);
    for i in 0..3 {
        let base = (1.0 - alpha) * r[i];
        let clamped = (v[i] + base).clamp(0.0, s);
        assert!((d[i] * v[i] + base - clamped).abs() < 1e-15);
    }
}

#[test]
fn zero_offset_on_the_rail_is_reported() {
    let r = DVector::from_vec(vec![10.0]);
    assert!(eval_switch_matrix_ff(&DVector::zeros(1), &r, 0.9, 0.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn threshold_clamp_is_idempotent_and_bounded(v in prop::collection::vec(-10.0f64..10.0, 1..8), s in 0.01f64..5.0) {
        let v = DVector::from_vec(v);
        let c = ltn_core::threshold_clamp(&v, s).unwrap();
        prop_assert!(c.iter().all(|&x| (0.0..=s).contains(&x)));
        prop_assert_eq!(ltn_core::threshold_clamp(&c, s).unwrap(), c);
    }

    #[test]
    fn the_state_box_is_invariant(seed in 0u64..1_000_000, n in 1usize..5, m in 1usize..3) {
        let mut rng = common::rng(seed);
        let sys = common::random_system(&mut rng, n, m);
        let mut x = common::random_state(&mut rng, n, sys.state_upper_bound());
        for _ in 0..20 {
            let u = DVector::from_fn(m, |_, _| rng.random_range(-5.0..5.0));
            x = sys.step(&x, &u).unwrap();
            prop_assert!(sys.is_admissible(&x));
        }
    }
}
