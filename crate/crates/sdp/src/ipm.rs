//! Infeasible-start primal-dual interior-point method for block-diagonal LMIs.
//!
//! The reduced problem `maximize cᵀz s.t. F0 + Σ z_k F_k ⪰ 0` is the dual of
//! `minimize ⟨F0, X⟩ s.t. ⟨F_k, X⟩ = -c_k, X ⪰ 0`. We iterate on the pair in
//! the usual standard form with `C = F0`, `A_k = -F_k`, `b = c` and the HKM
//! search direction, using a Mehrotra predictor-corrector step.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::presolve::ReducedLmi;
use crate::solution::{min_eigenvalue, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Optimal,
    /// Iteration cap hit with small infeasibilities but an open gap.
    Stalled,
    Infeasible,
    Unbounded,
    NumericalFailure,
    Timeout,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOutcome {
    pub status: IpmStatus,
    pub z: DVector<f64>,
    pub iterations: usize,
    pub message: String,
}

type Blocks = Vec<DMatrix<f64>>;

const FALLBACK_TOL: f64 = 1e-3;

fn inner(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &Blocks) -> f64 {
    inner(a, a).sqrt()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

struct Data<'a> {
    lmi: &'a ReducedLmi,
}

impl Data<'_> {
    fn dim(&self) -> usize {
        self.lmi.dim()
    }

    /// `𝒜(X)_k = ⟨A_k, X⟩ = -⟨F_k, X⟩`.
    fn op(&self, x: &Blocks) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.lmi.fk.iter().map(|fk| -inner(fk, x)))
    }

    /// `𝒜*(y) = Σ y_k A_k = -Σ y_k F_k`.
    fn adj(&self, y: &DVector<f64>) -> Blocks {
        let mut out: Blocks = self
            .lmi
            .block_sizes
            .iter()
            .map(|&n| DMatrix::zeros(n, n))
            .collect();
        for (k, fk) in self.lmi.fk.iter().enumerate() {
            let yk = y[k];
            if yk != 0.0 {
                for (o, f) in out.iter_mut().zip(fk) {
                    *o -= f * yk;
                }
            }
        }
        out
    }
}

/// Largest step `a` in `(0, cap]` keeping `x + a dx ⪰ 0` given `x ≻ 0`.
fn max_step(x: &Blocks, dx: &Blocks, cap: f64) -> Option<f64> {
    let mut step = cap;
    for (xb, db) in x.iter().zip(dx) {
        let chol = xb.clone().cholesky()?;
        let l = chol.l();
        let linv = l.clone().try_inverse()?;
        let m = sym(&linv * db * linv.transpose());
        let lmin = SymmetricEigen::new(m).eigenvalues.min();
        if lmin < 0.0 {
            step = step.min(-1.0 / lmin);
        }
    }
    Some(step)
}

fn inverse_spd(b: &Blocks) -> Option<Blocks> {
    b.iter()
        .map(|m| m.clone().cholesky().map(|c| sym(c.inverse())))
        .collect()
}

pub(crate) fn solve(lmi: &ReducedLmi, settings: &SolverSettings, start: Instant) -> IpmOutcome {
    let data = Data { lmi };
    let d = data.dim();
    let n_tot: usize = lmi.block_sizes.iter().sum();
    let nf = n_tot as f64;
    let b = &lmi.c;
    let c_blocks: &Blocks = &lmi.f0;

    let norm_c = frob(c_blocks);
    let norm_b = b.norm();
    let max_a = lmi.fk.iter().map(frob).fold(0.0, f64::max);
    let xi = (10.0f64)
        .max(nf.sqrt())
        .max(
            b.iter()
                .map(|bk| nf.sqrt() * (1.0 + bk.abs()) / (1.0 + max_a))
                .fold(0.0, f64::max),
        );
    let eta = (10.0f64).max(nf.sqrt()).max(max_a).max(norm_c);

    let mut x: Blocks = lmi
        .block_sizes
        .iter()
        .map(|&n| DMatrix::identity(n, n) * xi)
        .collect();
    let mut z: Blocks = lmi
        .block_sizes
        .iter()
        .map(|&n| DMatrix::identity(n, n) * eta)
        .collect();
    let mut y = DVector::zeros(d);

    let out = |status: IpmStatus, y: &DVector<f64>, it: usize, msg: String| IpmOutcome {
        status,
        z: y.clone(),
        iterations: it,
        message: msg,
    };

    let trace = std::env::var_os("LTN_SDP_TRACE").is_some();
    let mut last_good: Option<(DVector<f64>, f64, f64)> = None;
    // on breakdown, fall back to the last dual-feasible iterate if it is close enough
    let fail = |y: &DVector<f64>, it: usize, msg: &str, last: &Option<(DVector<f64>, f64, f64)>| match last {
        Some((yg, gap, pinf)) if *gap < FALLBACK_TOL && *pinf < FALLBACK_TOL => out(
            IpmStatus::Stalled,
            yg,
            it,
            format!("{msg}; kept last feasible iterate with relgap {gap:.2e}"),
        ),
        _ => out(IpmStatus::NumericalFailure, y, it, msg.to_string()),
    };
    for it in 0..settings.max_iter {
        if let Some(limit) = settings.time_limit {
            if start.elapsed() > limit {
                return out(IpmStatus::Timeout, &y, it, "time limit reached".into());
            }
        }
        let ax = data.op(&x);
        let rp = b - &ax;
        let aty = data.adj(&y);
        let rd: Blocks = c_blocks
            .iter()
            .zip(&z)
            .zip(&aty)
            .map(|((c, zb), a)| c - zb - a)
            .collect();
        let mu = inner(&x, &z) / nf;
        let pobj = inner(c_blocks, &x);
        let dobj = b.dot(&y);
        let relgap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let pinf = rp.norm() / (1.0 + norm_b);
        let dinf = frob(&rd) / (1.0 + norm_c);

        if trace {
            eprintln!("it {it:3} pobj {pobj:+.6e} dobj {dobj:+.6e} gap {relgap:.1e} pinf {pinf:.1e} dinf {dinf:.1e} mu {mu:.1e}");
        }
        if pinf < settings.gap_tol && dinf < settings.gap_tol && relgap < settings.gap_tol {
            return out(IpmStatus::Optimal, &y, it, format!("relgap {relgap:.2e}"));
        }
        let better = last_good.as_ref().is_none_or(|(yg, _, _)| dobj > b.dot(yg));
        if dinf < 1e-6 && better {
            let lmi_ok = c_blocks
                .iter()
                .zip(&aty)
                .all(|(c, a)| min_eigenvalue(&(c - a)) >= -0.01 * settings.feas_tol);
            if lmi_ok {
                last_good = Some((y.clone(), relgap, pinf));
            }
        }
        // certificates of infeasibility
        if pobj < 0.0 && ax.norm() / (-pobj) < 1e-9 && frob(&x) > 1e6 {
            return out(
                IpmStatus::Infeasible,
                &y,
                it,
                "primal ray certifies that the LMI is infeasible".into(),
            );
        }
        if dobj > 0.0 {
            let resid: Blocks = c_blocks.iter().zip(&rd).map(|(c, r)| c - r).collect();
            if frob(&resid) / dobj < 1e-9 && y.norm() > 1e6 {
                return out(IpmStatus::Unbounded, &y, it, "objective is unbounded".into());
            }
        }

        let zinv = match inverse_spd(&z) {
            Some(v) => v,
            None => return fail(&y, it, "dual slack lost definiteness", &last_good),
        };

        // Schur complement M_kl = ⟨A_k, X A_l Z⁻¹⟩
        let mut schur = DMatrix::<f64>::zeros(d, d);
        for l in 0..d {
            let g: Blocks = lmi.fk[l]
                .iter()
                .zip(&x)
                .zip(&zinv)
                .map(|((f, xb), zi)| xb * f * zi)
                .collect();
            for k in 0..=l {
                let v: f64 = lmi.fk[k].iter().zip(&g).map(|(f, gb)| f.dot(gb)).sum();
                schur[(k, l)] = v;
                schur[(l, k)] = v;
            }
        }
        let chol = {
            let mut reg = 0.0;
            let scale = schur.diagonal().amax().max(1e-300);
            loop {
                let mut m = schur.clone();
                for i in 0..d {
                    m[(i, i)] += reg;
                }
                if let Some(c) = m.cholesky() {
                    break Some(c);
                }
                reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
                if reg > 1e-4 * scale {
                    break None;
                }
            }
        };
        let chol = match chol {
            Some(c) => c,
            None => return fail(&y, it, "Schur complement is singular", &last_good),
        };

        let x_rd_zinv: Blocks = x
            .iter()
            .zip(&rd)
            .zip(&zinv)
            .map(|((xb, r), zi)| xb * r * zi)
            .collect();
        let base_rhs = b + data.op(&x_rd_zinv);

        let direction = |rhs: &DVector<f64>, extra: &Blocks, sigma_mu: f64| -> (DVector<f64>, Blocks, Blocks) {
            let dy = chol.solve(rhs);
            let ady = data.adj(&dy);
            let dz: Blocks = rd.iter().zip(&ady).map(|(r, a)| r - a).collect();
            let dx: Blocks = x
                .iter()
                .zip(&dz)
                .zip(&zinv)
                .zip(extra)
                .map(|(((xb, dzb), zi), e)| sym(zi * sigma_mu - xb - e * zi - xb * dzb * zi))
                .collect();
            (dy, dx, dz)
        };

        // predictor
        let zero_extra: Blocks = lmi.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        let (_, dx_a, dz_a) = direction(&base_rhs, &zero_extra, 0.0);
        let (ap, ad) = match (max_step(&x, &dx_a, 1.0), max_step(&z, &dz_a, 1.0)) {
            (Some(a), Some(b)) => (a, b),
            _ => return fail(&y, it, "step length failed", &last_good),
        };
        let x_aff: Blocks = x.iter().zip(&dx_a).map(|(a, b)| a + b * ap).collect();
        let z_aff: Blocks = z.iter().zip(&dz_a).map(|(a, b)| a + b * ad).collect();
        let mu_aff = inner(&x_aff, &z_aff) / nf;
        let expon = (3.0 * ap.min(ad).powi(2)).max(1.0);
        let sigma = (mu_aff / mu).powf(expon).clamp(0.0, 1.0);

        // corrector
        let cross: Blocks = dx_a.iter().zip(&dz_a).map(|(a, b)| a * b).collect();
        let sig_zinv: Blocks = zinv.iter().map(|zi| zi * (sigma * mu)).collect();
        let cross_zinv: Blocks = cross.iter().zip(&zinv).map(|(c, zi)| c * zi).collect();
        let rhs = &base_rhs - data.op(&sig_zinv) + data.op(&cross_zinv);
        let (dy, dx, dz) = direction(&rhs, &cross, sigma * mu);

        let tau = 0.9 + 0.09 * ap.min(ad);
        let (apm, adm) = match (max_step(&x, &dx, 1e12), max_step(&z, &dz, 1e12)) {
            (Some(a), Some(b)) => (a, b),
            _ => return fail(&y, it, "step length failed", &last_good),
        };
        let sp = (tau * apm).min(1.0);
        let sd = (tau * adm).min(1.0);
        for (xb, d) in x.iter_mut().zip(&dx) {
            *xb += d * sp;
        }
        for (zb, d) in z.iter_mut().zip(&dz) {
            *zb += d * sd;
        }
        y += dy * sd;
        if sp < 1e-12 && sd < 1e-12 {
            break;
        }
    }
    fail(&y, settings.max_iter, "no convergence within the iteration cap", &last_good)
}
