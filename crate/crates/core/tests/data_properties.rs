mod common;

use ltn_core::data::{
    build_data_matrices, check_richness, collect_random_dataset, permute_row, permuted_row_index, sample_major_row,
    unpermute_row, DEFAULT_EPS_SAT,
};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(256)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn masked_entries_are_exactly_the_railed_ones(seed in 0u64..1_000_000, n in 1usize..5, m in 1usize..4, t_d in 1usize..30) {
        let mut rng = common::rng(seed);
        let sys = common::random_system(&mut rng, n, m);
        let ub = sys.state_upper_bound();
        let ds = collect_random_dataset(&sys, t_d, (0.0, ub), (0.0, 1.0), seed, None).unwrap();
        let dm = build_data_matrices(&ds, sys.alpha(), sys.s(), DEFAULT_EPS_SAT).unwrap();
        let s = sys.s();
        for k in 0..t_d {
            let pre = sys.w() * &ds.x[k] + sys.b() * &ds.u[k];
            for i in 0..n {
                let q = dm.q_blocks[i].row(k);
                if dm.sat_mask[i][k] {
                    prop_assert!(pre[i] <= DEFAULT_EPS_SAT + 1e-12 || pre[i] >= s - DEFAULT_EPS_SAT - 1e-12);
                    prop_assert_eq!(dm.z_blocks[i][k], 0.0);
                    prop_assert!(q.iter().all(|&v| v == 0.0));
                } else {
                    prop_assert!(pre[i] > 0.0 && pre[i] < s);
                    prop_assert!((dm.z_blocks[i][k] - pre[i]).abs() <= 1e-12 * (1.0 + pre[i].abs()));
                    for j in 0..n {
                        prop_assert_eq!(q[j], ds.x[k][j]);
                    }
                    for j in 0..m {
                        prop_assert_eq!(q[n + j], ds.u[k][j]);
                    }
                }
            }
        }
    }

    #[test]
    fn permutation_round_trips(n in 1usize..12, t_d in 1usize..60, pick in 0usize..10_000) {
        let row = pick % (n * t_d) + 1;
        let p = permute_row(row, n, t_d).unwrap();
        prop_assert!(p >= 1 && p <= n * t_d);
        prop_assert_eq!(unpermute_row(p, n, t_d).unwrap(), row);
        prop_assert_eq!(permute_row(unpermute_row(row, n, t_d).unwrap(), n, t_d).unwrap(), row);
        let (k, i) = ((row - 1) / n + 1, (row - 1) % n + 1);
        prop_assert_eq!(sample_major_row(i, k, n, t_d).unwrap(), row);
        prop_assert_eq!(permuted_row_index(i, k, n, t_d).unwrap(), p);
    }

    #[test]
    fn node_ranks_never_drop_when_samples_are_added(seed in 0u64..1_000_000, n in 1usize..5, m in 1usize..4, t1 in 1usize..15, t2 in 1usize..15) {
        let mut rng = common::rng(seed);
        let sys = common::random_system(&mut rng, n, m);
        let ub = sys.state_upper_bound();
        let mut ds = collect_random_dataset(&sys, t1, (0.0, ub), (0.0, 1.0), seed, None).unwrap();
        let before = build_data_matrices(&ds, sys.alpha(), sys.s(), DEFAULT_EPS_SAT).unwrap();
        let more = collect_random_dataset(&sys, t2, (0.0, ub), (0.0, 1.0), seed + 1, None).unwrap();
        ds.extend(&more);
        let after = build_data_matrices(&ds, sys.alpha(), sys.s(), DEFAULT_EPS_SAT).unwrap();
        for i in 0..n {
            prop_assert!(after.node_ranks[i] >= before.node_ranks[i]);
            prop_assert!(after.node_ranks[i] <= n + m);
        }
    }

    #[test]
    fn short_datasets_are_never_rich(seed in 0u64..1_000_000, n in 1usize..5, m in 1usize..4, short in 1usize..8) {
        let t_d = short.min(n + m - 1).max(1);
        prop_assume!(t_d < n + m);
        let mut rng = common::rng(seed);
        let sys = common::random_system(&mut rng, n, m);
        let ub = sys.state_upper_bound();
        let ds = collect_random_dataset(&sys, t_d, (0.0, ub), (0.0, 1.0), seed, None).unwrap();
        let dm = build_data_matrices(&ds, sys.alpha(), sys.s(), DEFAULT_EPS_SAT).unwrap();
        let rep = check_richness(&dm);
        prop_assert!(!rep.pass);
        prop_assert_eq!(rep.deficient_nodes.len(), n);
    }
}

#[test]
fn permutation_is_a_bijection() {
    for (n, t_d) in [(1, 1), (3, 5), (4, 250), (15, 7)] {
        let mut seen = vec![false; n * t_d];
        for row in 1..=n * t_d {
            let p = permute_row(row, n, t_d).unwrap();
            assert!(!seen[p - 1]);
            seen[p - 1] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }
}

#[test]
fn out_of_range_rows_are_rejected() {
    assert!(permute_row(0, 3, 4).is_err());
    assert!(permute_row(13, 3, 4).is_err());
    assert!(unpermute_row(13, 3, 4).is_err());
    assert!(permuted_row_index(4, 1, 3, 4).is_err());
    assert!(sample_major_row(1, 5, 3, 4).is_err());
}

#[test]
fn clean_rich_data_recover_the_plant_rows() {
    let mut rng = common::rng(5);
    let (sys, _, dm) = common::rich_instance(&mut rng, 3, 2, 30);
    for i in 0..3 {
        let q = &dm.q_blocks[i];
        let z = nalgebra::DMatrix::from_column_slice(30, 1, dm.z_blocks[i].as_slice());
        let theta = q.clone().svd(true, true).solve(&z, 1e-12).unwrap();
        for j in 0..3 {
            assert!((theta[(j, 0)] - sys.w()[(i, j)]).abs() < 1e-9);
        }
        for j in 0..2 {
            assert!((theta[(3 + j, 0)] - sys.b()[(i, j)]).abs() < 1e-9);
        }
    }
}
