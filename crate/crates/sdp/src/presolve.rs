//! Reduction of an [`SdpProblem`] to a pure LMI in a small number of free
//! coordinates.
//!
//! The problem only sees its variables through the affine forms sitting in
//! the PSD blocks, the equalities and the objective. Directions of the scalar
//! vector orthogonal to every form are irrelevant, so the solve happens in
//! the row space of the distinct forms. Equalities are then eliminated with a
//! null-space basis, and the remaining LMI directions are orthonormalized.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Dyn, SVD};

use crate::problem::{LinearForm, SdpProblem};
use crate::solution::{min_eigenvalue, SolverSettings};

const RANGE_RANK_TOL: f64 = 1e-12;
const DEDUP_TOL: f64 = 1e-15;
/// About 1.2 GB of f64.
const MAX_DENSE_ENTRIES: usize = 150_000_000;
const SVD_RANK_TOL: f64 = 1e-10;

/// `maximize c·z + c0  s.t.  F0 + Σ z_k F_k ⪰ 0` over block-diagonal data.
#[derive(Debug, Clone)]
pub(crate) struct ReducedLmi {
    pub block_sizes: Vec<usize>,
    pub f0: Vec<DMatrix<f64>>,
    /// `fk[k][b]` is the coefficient of `z_k` in block `b`.
    pub fk: Vec<Vec<DMatrix<f64>>>,
    pub c: DVector<f64>,
    #[allow(dead_code)]
    pub c0: f64,
}

impl ReducedLmi {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn eval_blocks(&self, z: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out = self.f0.clone();
        for (k, blocks) in self.fk.iter().enumerate() {
            for (o, f) in out.iter_mut().zip(blocks) {
                *o += f * z[k];
            }
        }
        out
    }
}

/// Maps reduced coordinates back to the flattened scalar vector.
#[derive(Debug, Clone)]
pub(crate) struct Recovery {
    /// Orthonormal basis of the span of the distinct forms.
    basis: DMatrix<f64>,
    w0: DVector<f64>,
    null_eq: DMatrix<f64>,
    directions: DMatrix<f64>,
}

impl Recovery {
    pub fn scalars(&self, z: &DVector<f64>) -> Vec<f64> {
        let w = &self.w0 + &self.null_eq * (&self.directions * z);
        (&self.basis * w).iter().copied().collect()
    }
}

pub(crate) enum Presolved {
    Reduced(ReducedLmi, Recovery),
    Infeasible(String),
    Unbounded(String),
    TooLarge(String),
}

/// Where a form slot lives after deduplication: `scale * unit_row[idx]`.
#[derive(Clone, Copy)]
struct Slot {
    idx: Option<usize>,
    scale: f64,
}

struct FormTable {
    unit_rows: Vec<LinearForm>,
    keys: HashMap<Vec<(usize, i64)>, Vec<usize>>,
}

impl FormTable {
    fn new() -> Self {
        Self {
            unit_rows: Vec::new(),
            keys: HashMap::new(),
        }
    }

    fn intern(&mut self, form: &LinearForm) -> Slot {
        let f = form.canonical();
        if f.terms.is_empty() {
            return Slot { idx: None, scale: 0.0 };
        }
        let norm = f.terms.iter().map(|&(_, c)| c * c).sum::<f64>().sqrt();
        let scale = norm * f.terms[0].1.signum();
        let unit = f.scaled(1.0 / scale);
        let key: Vec<(usize, i64)> = unit.terms.iter().map(|&(v, c)| (v, quantize(c))).collect();
        let bucket = self.keys.entry(key).or_default();
        for &idx in bucket.iter() {
            let rep = &self.unit_rows[idx];
            let same = rep.terms.len() == unit.terms.len()
                && rep
                    .terms
                    .iter()
                    .zip(&unit.terms)
                    .all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() <= DEDUP_TOL);
            if same {
                return Slot { idx: Some(idx), scale };
            }
        }
        let idx = self.unit_rows.len();
        self.unit_rows.push(unit);
        bucket.push(idx);
        Slot { idx: Some(idx), scale }
    }
}

/// Thin SVD of a matrix with at least as many rows as columns, in the
/// nalgebra layout used below. faer's SVD is accurate to working precision
/// on the ill-conditioned matrices met here.
fn tall_svd(m: DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let (rows, cols) = m.shape();
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().expect("svd converges");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    SVD {
        u: Some(DMatrix::from_fn(rows, k, |i, j| u[(i, j)])),
        v_t: Some(DMatrix::from_fn(k, cols, |i, j| v[(j, i)])),
        singular_values: DVector::from_fn(k, |i, _| s[i]),
    }
}

fn quantize(x: f64) -> i64 {
    (x * (1u64 << 32) as f64).round() as i64
}

pub(crate) fn presolve(problem: &SdpProblem, settings: &SolverSettings) -> Presolved {
    let mut table = FormTable::new();

    // cone entries, lower triangle, column-major within each block
    let mut cone_slots: Vec<Vec<(usize, usize, Slot, f64)>> = Vec::new();
    for c in problem.psd_constraints() {
        let n = c.size();
        let mut slots = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in j..n {
                let s = table.intern(c.expr.form(i, j));
                slots.push((i, j, s, c.expr.constant_part()[(i, j)]));
            }
        }
        cone_slots.push(slots);
    }
    let obj_slot = table.intern(problem.objective());
    let mut eq_slots: Vec<(Slot, f64)> = Vec::new();
    for c in problem.equality_constraints() {
        let (r, k) = c.expr.shape();
        for j in 0..k {
            for i in 0..r {
                let s = table.intern(c.expr.form(i, j));
                eq_slots.push((s, c.expr.constant_part()[(i, j)]));
            }
        }
    }

    // range of the distinct unit rows, A = V Σ Uᵀ with y = U w
    let u = table.unit_rows.len();
    let n_scalars = problem.num_scalars();
    if n_scalars.max(u).saturating_mul(u) > MAX_DENSE_ENTRIES {
        return Presolved::TooLarge(format!(
            "{u} distinct forms over {n_scalars} scalars exceed the dense presolve limit"
        ));
    }
    let (coords, basis) = if u == 0 || n_scalars == 0 {
        (DMatrix::zeros(u, 0), DMatrix::zeros(n_scalars, 0))
    } else {
        let mut at = DMatrix::<f64>::zeros(n_scalars.max(u), u);
        for (i, row) in table.unit_rows.iter().enumerate() {
            for &(v, c) in &row.terms {
                at[(v, i)] += c;
            }
        }
        let svd = tall_svd(at);
        let u_mat = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let smax = svd.singular_values.max();
        let kept: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > RANGE_RANK_TOL * smax)
            .collect();
        let mut coords = DMatrix::zeros(u, kept.len());
        let mut basis = DMatrix::zeros(n_scalars, kept.len());
        for (col, &k) in kept.iter().enumerate() {
            let sk = svd.singular_values[k];
            for i in 0..u {
                coords[(i, col)] = v_t[(k, i)] * sk;
            }
            basis.set_column(col, &u_mat.column(k).rows(0, n_scalars));
        }
        (coords, basis)
    };
    let r = coords.ncols();
    let slot_coords = |s: &Slot| -> DVector<f64> {
        match s.idx {
            Some(i) => coords.row(i).transpose() * s.scale,
            None => DVector::zeros(r),
        }
    };

    // equality elimination: E w = h
    let mut e_rows: Vec<DVector<f64>> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    for (s, constant) in &eq_slots {
        let a = slot_coords(s);
        let rhs = -constant;
        let nrm = a.norm();
        if nrm < 1e-14 {
            if rhs.abs() > settings.feas_tol {
                return Presolved::Infeasible(format!(
                    "equality with no variable dependence has residual {:.3e}",
                    rhs.abs()
                ));
            }
            continue;
        }
        e_rows.push(a / nrm);
        h.push(rhs / nrm);
    }
    let (w0, null_eq) = if e_rows.is_empty() || r == 0 {
        (DVector::zeros(r), DMatrix::identity(r, r))
    } else {
        let m = e_rows.len();
        let rows = m.max(r);
        let mut e = DMatrix::zeros(rows, r);
        for (i, row) in e_rows.iter().enumerate() {
            e.set_row(i, &row.transpose());
        }
        let mut hv = DVector::zeros(rows);
        for (i, &v) in h.iter().enumerate() {
            hv[i] = v;
        }
        let svd = tall_svd(e.clone());
        let u_mat = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let smax = svd.singular_values.max();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let rank = order
            .iter()
            .filter(|&&k| svd.singular_values[k] > SVD_RANK_TOL * smax)
            .count();
        let mut w0 = DVector::zeros(r);
        for &k in order.iter().take(rank) {
            let coef = u_mat.column(k).dot(&hv) / svd.singular_values[k];
            w0 += v_t.row(k).transpose() * coef;
        }
        let resid = (&e * &w0 - &hv).amax();
        if resid > 1e-9 * (1.0 + hv.amax()) {
            return Presolved::Infeasible(format!(
                "equality constraints are inconsistent (least-squares residual {resid:.3e})"
            ));
        }
        let mut null_eq = DMatrix::zeros(r, r - rank);
        for (col, &k) in order.iter().skip(rank).enumerate() {
            null_eq.set_column(col, &v_t.row(k).transpose());
        }
        (w0, null_eq)
    };
    let d1 = null_eq.ncols();

    // cone data in the free coordinates, svec-weighted for orthonormalization
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut block_sizes = Vec::new();
    let mut f0_blocks = Vec::new();
    let mut svec_rows: Vec<DVector<f64>> = Vec::new();
    let mut svec_index: Vec<(usize, usize, usize)> = Vec::new();
    for (cons, slots) in problem.psd_constraints().iter().zip(&cone_slots) {
        let n = cons.size();
        let mut f0 = DMatrix::zeros(n, n);
        let mut rows = Vec::with_capacity(slots.len());
        let mut depends = false;
        for (i, j, s, constant) in slots {
            let a = slot_coords(s);
            let v = constant + a.dot(&w0);
            f0[(*i, *j)] = v;
            f0[(*j, *i)] = v;
            let g = null_eq.tr_mul(&a);
            if g.amax() > 1e-14 {
                depends = true;
            }
            let w = if i == j { 1.0 } else { sqrt2 };
            rows.push((*i, *j, g * w));
        }
        if !depends {
            let mineig = min_eigenvalue(&f0);
            if mineig < -settings.feas_tol {
                return Presolved::Infeasible(format!(
                    "constraint '{}' is fixed by the equalities and has min eigenvalue {mineig:.3e}",
                    cons.label
                ));
            }
            continue;
        }
        let b = block_sizes.len();
        block_sizes.push(n);
        f0_blocks.push(f0);
        for (i, j, g) in rows {
            svec_rows.push(g);
            svec_index.push((b, i, j));
        }
    }

    let a_obj = slot_coords(&obj_slot);
    let c_free = null_eq.tr_mul(&a_obj);
    let c0 = problem.objective_constant() + a_obj.dot(&w0);

    // orthonormalize the LMI directions
    let nsv = svec_rows.len();
    let (directions, coeffs) = if d1 == 0 || nsv == 0 {
        if c_free.amax() > 1e-12 {
            return Presolved::Unbounded("objective has free directions outside every cone".into());
        }
        (DMatrix::zeros(d1, 0), DMatrix::zeros(nsv, 0))
    } else {
        let rows = nsv.max(d1);
        let mut a = DMatrix::zeros(rows, d1);
        for (i, g) in svec_rows.iter().enumerate() {
            a.set_row(i, &g.transpose());
        }
        let svd = tall_svd(a);
        let u_mat = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let smax = svd.singular_values.max();
        let mut kept = Vec::new();
        for k in 0..svd.singular_values.len() {
            let sk = svd.singular_values[k];
            let vk = v_t.row(k).transpose();
            if sk > SVD_RANK_TOL * smax {
                kept.push(k);
            } else if c_free.dot(&vk).abs() > 1e-9 * (1.0 + c_free.norm()) {
                return Presolved::Unbounded(
                    "objective improves along a direction that leaves every cone unchanged".into(),
                );
            }
        }
        let mut directions = DMatrix::zeros(d1, kept.len());
        let mut coeffs = DMatrix::zeros(nsv, kept.len());
        for (col, &k) in kept.iter().enumerate() {
            let sk = svd.singular_values[k];
            directions.set_column(col, &(v_t.row(k).transpose() / sk));
            coeffs.set_column(col, &u_mat.column(k).rows(0, nsv));
        }
        (directions, coeffs)
    };
    let d = directions.ncols();
    if std::env::var_os("LTN_SDP_TRACE").is_some() {
        eprintln!("presolve: scalars {} forms {u} range {r} free {d1} lmi dim {d}", problem.num_scalars());
    }
    let c = directions.tr_mul(&c_free);

    let mut fk: Vec<Vec<DMatrix<f64>>> = (0..d)
        .map(|_| block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect())
        .collect();
    for (row, &(b, i, j)) in svec_index.iter().enumerate() {
        let w = if i == j { 1.0 } else { sqrt2 };
        for (k, blocks) in fk.iter_mut().enumerate() {
            let v = coeffs[(row, k)] / w;
            blocks[b][(i, j)] = v;
            blocks[b][(j, i)] = v;
        }
    }

    let lmi = ReducedLmi {
        block_sizes,
        f0: f0_blocks,
        fk,
        c,
        c0,
    };
    let recovery = Recovery {
        basis,
        w0,
        null_eq,
        directions,
    };
    Presolved::Reduced(lmi, recovery)
}
