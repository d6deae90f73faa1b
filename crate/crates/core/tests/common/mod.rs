#![allow(dead_code)]

use ltn_core::data::{build_data_matrices, collect_random_dataset, DataMatrices, DEFAULT_EPS_SAT};
use ltn_core::{DataSet, LtnSystem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random plant with pre-activations of order `s` over the admissible box,
/// skewed positive so that most samples leave the lower rail.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LtnSystem {
    let alpha = rng.random_range(0.3..0.95);
    let s = rng.random_range(0.2..1.0);
    let ub = s / (1.0 - alpha);
    let w = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..1.0) * s / (ub * n as f64));
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-0.5..1.0) * s / m as f64);
    LtnSystem::new(alpha, s, w, b).expect("valid system")
}

/// First dataset (over increasing seeds) whose per-node ranks are full.
pub fn rich_dataset(sys: &LtnSystem, t_d: usize, seed: u64) -> Option<(DataSet, DataMatrices)> {
    let ub = sys.state_upper_bound();
    for attempt in 0..20 {
        let ds = collect_random_dataset(sys, t_d, (0.0, ub), (0.0, 1.0), seed * 1000 + attempt, None).ok()?;
        let dm = build_data_matrices(&ds, sys.alpha(), sys.s(), DEFAULT_EPS_SAT).ok()?;
        if dm.richness().pass {
            return Some((ds, dm));
        }
    }
    None
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_state(rng: &mut ChaCha8Rng, n: usize, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(0.0..hi))
}

/// Random plant together with rich data of length `t_d`, redrawing the plant
/// if no dataset is rich.
pub fn rich_instance(rng: &mut ChaCha8Rng, n: usize, m: usize, t_d: usize) -> (LtnSystem, DataSet, DataMatrices) {
    for attempt in 0..100 {
        let sys = random_system(rng, n, m);
        if let Some((ds, dm)) = rich_dataset(&sys, t_d, attempt) {
            return (sys, ds, dm);
        }
    }
    panic!("no rich instance with n = {n}, m = {m}, T_d = {t_d}");
}
