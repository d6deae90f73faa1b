//! LMI programs for the feedforward and integral controllers, gain
//! extraction and certificate re-checking.
//!
//! Decision variables are `P` (the inverse Lyapunov matrix, called P-bar in
//! the docs), `S1`, `S2` (stacked `T_d x n` blocks, one per node) and the
//! margin `gamma`. With `[M U] = [S1 S2] P^-1`, the data equalities force
//! `Q_i^T M_i = [I; K1]` for every node, so `Z M = W + B K1` without ever
//! reading `W` or `B`.

use std::collections::BTreeMap;

use ltn_sdp::{
    min_eigenvalue, LinearForm, MatExpr, SdpProblem, SdpSolution, SolveStatus, SolverSettings,
    Variable,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrices;
use crate::util::{condition_number, from_rows, min_norm_solve, min_singular_value, numerical_rank, right_solve_spd, rows_of};
use crate::{LtnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Feedforward,
    Integral,
}

impl ControllerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ff" | "feedforward" => Ok(Self::Feedforward),
            "integral" | "int" => Ok(Self::Integral),
            _ => Err(LtnError::InvalidParameter(format!("controller must be ff or integral, got '{s}'"))),
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Self::Feedforward => "ff",
            Self::Integral => "integral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexMode {
    Full,
    Reduced,
}

impl VertexMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "reduced" => Ok(Self::Reduced),
            _ => Err(LtnError::InvalidParameter(format!("vertex mode must be full or reduced, got '{s}'"))),
        }
    }

    /// Reduced above 8 nodes, full otherwise.
    pub fn default_for(n: usize) -> Self {
        if n > 8 {
            Self::Reduced
        } else {
            Self::Full
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Reduced => "reduced",
        }
    }
}

/// `L`, `L (x) I_{n+m}` and the selectors `C1`, `C2`.
#[derive(Debug, Clone)]
pub struct ConstantMatrices {
    pub l: DMatrix<f64>,
    pub cal_l: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
}

pub fn build_constant_matrices(n: usize, m: usize) -> Result<ConstantMatrices> {
    if n == 0 || m == 0 {
        return Err(LtnError::InvalidParameter("n and m must be positive".into()));
    }
    let l = DMatrix::from_fn(n, n, |i, j| if i == j { n as f64 - 1.0 } else { -1.0 });
    let cal_l = l.kronecker(&DMatrix::identity(n + m, n + m));
    let mut c1 = DMatrix::zeros(n, n * (n + m));
    let mut c2 = DMatrix::zeros(m, n * (n + m));
    for i in 0..n {
        c1[(i, i)] = 1.0;
    }
    for j in 0..m {
        c2[(j, n + j)] = 1.0;
    }
    Ok(ConstantMatrices { l, cal_l, c1, c2 })
}

/// Diagonals of the vertex matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    pub kind: VertexMode,
    pub diagonals: Vec<DVector<f64>>,
}

impl VertexSet {
    pub fn len(&self) -> usize {
        self.diagonals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonals.is_empty()
    }

    pub fn matrices(&self) -> Vec<DMatrix<f64>> {
        self.diagonals.iter().map(|d| DMatrix::from_diagonal(d)).collect()
    }
}

pub const DEFAULT_FULL_VERTEX_CAP: usize = 16;

/// Full: all `2^n` binary diagonals, the identity first. Reduced: the zero
/// matrix followed by the `n` single-one diagonals.
pub fn enumerate_vertices(n: usize, kind: VertexMode, cap: usize) -> Result<VertexSet> {
    let diagonals = match kind {
        VertexMode::Full => {
            if n > cap || n >= usize::BITS as usize {
                return Err(LtnError::InvalidParameter(format!(
                    "full vertex enumeration needs 2^{n} blocks (cap n <= {cap}); use --vertex-mode reduced"
                )));
            }
            let count = 1usize << n;
            (0..count)
                .map(|idx| {
                    let mask = count - 1 - idx;
                    DVector::from_fn(n, |i, _| ((mask >> i) & 1) as f64)
                })
                .collect()
        }
        VertexMode::Reduced => {
            let mut v = vec![DVector::zeros(n)];
            for k in 0..n {
                let mut d = DVector::zeros(n);
                d[k] = 1.0;
                v.push(d);
            }
            v
        }
    };
    Ok(VertexSet { kind, diagonals })
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// `None` picks [`VertexMode::default_for`].
    pub vertex_mode: Option<VertexMode>,
    pub gamma_min: f64,
    pub full_vertex_cap: usize,
    pub max_condition: f64,
    pub solver: SolverSettings,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            vertex_mode: None,
            gamma_min: 1e-6,
            full_vertex_cap: DEFAULT_FULL_VERTEX_CAP,
            max_condition: 1e10,
            solver: SolverSettings::default(),
        }
    }
}

/// An assembled program together with its variable handles.
#[derive(Debug, Clone)]
pub struct Program {
    pub kind: ControllerKind,
    pub vertex_mode: VertexMode,
    pub alpha: f64,
    pub problem: SdpProblem,
    pub p: Variable,
    pub s1: Variable,
    pub s2: Variable,
    pub gamma: Variable,
    pub vertex_blocks: usize,
}

struct Exprs {
    p: MatExpr,
    zs1: MatExpr,
    zs2: MatExpr,
    qs1: Vec<MatExpr>,
    qs2: Vec<MatExpr>,
    gamma: LinearForm,
}

fn declare(dm: &DataMatrices, p_size: usize) -> (SdpProblem, Variable, Variable, Variable, Variable, Exprs) {
    let (n, t) = (dm.n, dm.t_d);
    let mut prob = SdpProblem::new();
    let p = prob.add_variable("P", p_size, p_size, true);
    let s1 = prob.add_variable("S1", n * t, n, false);
    let s2 = prob.add_variable("S2", n * t, n, false);
    let g = prob.add_variable("gamma", 1, 1, false);
    let s1e = MatExpr::of_var(&s1);
    let s2e = MatExpr::of_var(&s2);
    let mut zs1 = Vec::with_capacity(n);
    let mut zs2 = Vec::with_capacity(n);
    let mut qs1 = Vec::with_capacity(n);
    let mut qs2 = Vec::with_capacity(n);
    for i in 0..n {
        let zi = DMatrix::from_row_slice(1, t, dm.z_blocks[i].as_slice());
        let qt = dm.q_blocks[i].transpose();
        let b1 = s1e.rows_range(i * t, t);
        let b2 = s2e.rows_range(i * t, t);
        zs1.push(b1.left_mul(&zi));
        zs2.push(b2.left_mul(&zi));
        qs1.push(b1.left_mul(&qt));
        qs2.push(b2.left_mul(&qt));
    }
    let exprs = Exprs {
        p: MatExpr::of_var(&p),
        zs1: MatExpr::vstack(&zs1),
        zs2: MatExpr::vstack(&zs2),
        qs1,
        qs2,
        gamma: LinearForm::single(g.offset, 1.0),
    };
    (prob, p, s1, s2, g, exprs)
}

/// `Q_i^T S_i = Q_1^T S_1` for `i >= 2`.
fn add_decoupling(prob: &mut SdpProblem, name: &str, qs: &[MatExpr]) {
    for (i, q) in qs.iter().enumerate().skip(1) {
        prob.add_equality(format!("decouple {name} node {}", i + 1), q.sub(&qs[0]));
    }
}

fn vertex_factors(n: usize, mode: VertexMode, cap: usize) -> Result<Vec<(String, DMatrix<f64>)>> {
    let set = enumerate_vertices(n, mode, cap)?;
    Ok(match mode {
        // R_1 = I is covered by the strict block
        VertexMode::Full => set
            .matrices()
            .into_iter()
            .enumerate()
            .skip(1)
            .map(|(j, r)| (format!("vertex R_{}", j + 1), r))
            .collect(),
        VertexMode::Reduced => set
            .matrices()
            .into_iter()
            .enumerate()
            .map(|(k, r)| (format!("vertex n*R~_{k}"), r * n as f64))
            .collect(),
    })
}

fn resolve_mode(n: usize, opts: &SynthesisOptions, mode: Option<VertexMode>) -> VertexMode {
    mode.or(opts.vertex_mode).unwrap_or_else(|| VertexMode::default_for(n))
}

pub fn assemble_ff_program(dm: &DataMatrices, alpha: f64, mode: VertexMode, opts: &SynthesisOptions) -> Result<Program> {
    let n = dm.n;
    let factors = vertex_factors(n, mode, opts.full_vertex_cap)?;
    let (mut prob, p, s1, s2, g, e) = declare(dm, n);
    prob.add_psd("P <= I", MatExpr::identity(n).sub(&e.p));
    let ap = e.p.scale(alpha);
    let strict = MatExpr::symmetric_blocks(&e.p, &ap.add(&e.zs1), &e.p)
        .sub(&MatExpr::form_identity(2 * n, &e.gamma));
    prob.add_psd("strict", strict);
    for (label, r) in &factors {
        let lower = ap.add(&e.zs1.left_mul(r));
        prob.add_psd(label.clone(), MatExpr::symmetric_blocks(&e.p, &lower, &e.p));
    }
    add_decoupling(&mut prob, "S1", &e.qs1);
    add_decoupling(&mut prob, "S2", &e.qs2);
    prob.add_equality("C1 Q'S1 = P", e.qs1[0].rows_range(0, n).sub(&e.p));
    prob.add_equality("C1 Q'S2 = 0", e.qs2[0].rows_range(0, n));
    prob.add_equality("Z(S1+S2) = (1-alpha)P", e.zs1.add(&e.zs2).sub(&e.p.scale(1.0 - alpha)));
    prob.set_objective(e.gamma.clone(), 0.0);
    Ok(Program {
        kind: ControllerKind::Feedforward,
        vertex_mode: mode,
        alpha,
        problem: prob,
        p,
        s1,
        s2,
        gamma: g,
        vertex_blocks: factors.len(),
    })
}

/// Lower-left `2n x 2n` block `[[aP11 + R ZS1, aP12 + R ZS2], [P11 + P12', P12 + P22]]`.
fn integral_lower(p: &MatExpr, zs1: &MatExpr, zs2: &MatExpr, r: &DMatrix<f64>, alpha: f64, n: usize) -> MatExpr {
    let p11 = p.view(0, 0, n, n);
    let p12 = p.view(0, n, n, n);
    let p22 = p.view(n, n, n, n);
    let top = MatExpr::hstack(&[
        p11.scale(alpha).add(&zs1.left_mul(r)),
        p12.scale(alpha).add(&zs2.left_mul(r)),
    ]);
    let bottom = MatExpr::hstack(&[p11.add(&p12.transpose()), p12.add(&p22)]);
    MatExpr::vstack(&[top, bottom])
}

pub fn assemble_integral_program(
    dm: &DataMatrices,
    alpha: f64,
    mode: VertexMode,
    opts: &SynthesisOptions,
) -> Result<Program> {
    let n = dm.n;
    let factors = vertex_factors(n, mode, opts.full_vertex_cap)?;
    let (mut prob, p, s1, s2, g, e) = declare(dm, 2 * n);
    prob.add_psd("P <= I", MatExpr::identity(2 * n).sub(&e.p));
    let eye = DMatrix::identity(n, n);
    let strict_lower = integral_lower(&e.p, &e.zs1, &e.zs2, &eye, alpha, n);
    let strict = MatExpr::symmetric_blocks(&e.p, &strict_lower, &e.p)
        .sub(&MatExpr::form_identity(4 * n, &e.gamma));
    prob.add_psd("strict", strict);
    for (label, r) in &factors {
        let lower = integral_lower(&e.p, &e.zs1, &e.zs2, r, alpha, n);
        prob.add_psd(label.clone(), MatExpr::symmetric_blocks(&e.p, &lower, &e.p));
    }
    add_decoupling(&mut prob, "S1", &e.qs1);
    add_decoupling(&mut prob, "S2", &e.qs2);
    prob.add_equality("C1 Q'S1 = P11", e.qs1[0].rows_range(0, n).sub(&e.p.view(0, 0, n, n)));
    prob.add_equality("C1 Q'S2 = P12", e.qs2[0].rows_range(0, n).sub(&e.p.view(0, n, n, n)));
    prob.set_objective(e.gamma.clone(), 0.0);
    Ok(Program {
        kind: ControllerKind::Integral,
        vertex_mode: mode,
        alpha,
        problem: prob,
        p,
        s1,
        s2,
        gamma: g,
        vertex_blocks: factors.len(),
    })
}

pub fn assemble_program(
    dm: &DataMatrices,
    kind: ControllerKind,
    mode: VertexMode,
    opts: &SynthesisOptions,
) -> Result<Program> {
    match kind {
        ControllerKind::Feedforward => assemble_ff_program(dm, dm.alpha, mode, opts),
        ControllerKind::Integral => assemble_integral_program(dm, dm.alpha, mode, opts),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub backend: String,
    pub status: String,
    pub iterations: usize,
    pub solve_time_s: f64,
    pub reduced_dim: usize,
    pub objective: Option<f64>,
    pub message: String,
}

impl SolverInfo {
    fn from_solution(sol: &SdpSolution) -> Self {
        Self {
            backend: sol.stats.backend.clone(),
            status: serde_json::to_value(sol.status)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            iterations: sol.stats.iterations,
            solve_time_s: sol.stats.solve_time_s,
            reduced_dim: sol.stats.reduced_dim,
            objective: sol.objective,
            message: sol.stats.message.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub kind: ControllerKind,
    pub vertex_mode: VertexMode,
    pub alpha: f64,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    /// `n x n` (feedforward) or `2n x 2n` (integral).
    pub p_bar: DMatrix<f64>,
    pub s1: Vec<DMatrix<f64>>,
    pub s2: Vec<DMatrix<f64>>,
    /// Certified margin: smallest eigenvalue of the strict block, capped by
    /// the solver's value.
    pub gamma: f64,
    /// `Z M` with `M = S1 P^-1` (feedforward) or the first block column of
    /// `[S1 S2] P^-1` (integral).
    pub zm: DMatrix<f64>,
    /// `Z N`: `Z S2 P^-1` (feedforward) or `Z N` with `Q_i^T N_i = [0; -K1]`
    /// (integral).
    pub zn: DMatrix<f64>,
    /// `Z U` (integral only).
    pub zu: Option<DMatrix<f64>>,
    pub p_min_eig: f64,
    pub p_condition: f64,
    pub residuals: BTreeMap<String, f64>,
    pub solver: SolverInfo,
}

impl SynthesisResult {
    pub fn n(&self) -> usize {
        self.k1.ncols()
    }

    pub fn m(&self) -> usize {
        self.k1.nrows()
    }

    /// `min sigma(Z U)` for integral results.
    pub fn zu_min_singular_value(&self) -> Option<f64> {
        self.zu.as_ref().map(min_singular_value)
    }
}

#[derive(Serialize, Deserialize)]
struct ResultJson {
    controller_kind: ControllerKind,
    vertex_mode: VertexMode,
    alpha: f64,
    n: usize,
    m: usize,
    #[serde(rename = "K1")]
    k1: Vec<Vec<f64>>,
    #[serde(rename = "K2")]
    k2: Vec<Vec<f64>>,
    #[serde(rename = "P_bar")]
    p_bar: Vec<Vec<f64>>,
    gamma: f64,
    p_min_eig: f64,
    p_condition: f64,
    #[serde(rename = "ZM")]
    zm: Vec<Vec<f64>>,
    #[serde(rename = "ZN")]
    zn: Vec<Vec<f64>>,
    #[serde(rename = "ZU")]
    zu: Option<Vec<Vec<f64>>>,
    #[serde(rename = "S1")]
    s1: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "S2")]
    s2: Vec<Vec<Vec<f64>>>,
    residuals: BTreeMap<String, f64>,
    solver: SolverInfo,
}

impl SynthesisResult {
    pub fn to_json(&self) -> String {
        let j = ResultJson {
            controller_kind: self.kind,
            vertex_mode: self.vertex_mode,
            alpha: self.alpha,
            n: self.n(),
            m: self.m(),
            k1: rows_of(&self.k1),
            k2: rows_of(&self.k2),
            p_bar: rows_of(&self.p_bar),
            gamma: self.gamma,
            p_min_eig: self.p_min_eig,
            p_condition: self.p_condition,
            zm: rows_of(&self.zm),
            zn: rows_of(&self.zn),
            zu: self.zu.as_ref().map(rows_of),
            s1: self.s1.iter().map(rows_of).collect(),
            s2: self.s2.iter().map(rows_of).collect(),
            residuals: self.residuals.clone(),
            solver: self.solver.clone(),
        };
        serde_json::to_string_pretty(&j).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: ResultJson = serde_json::from_str(text)?;
        let (n, m) = (j.n, j.m);
        let pn = match j.controller_kind {
            ControllerKind::Feedforward => n,
            ControllerKind::Integral => 2 * n,
        };
        let mat = |rows: &[Vec<f64>], r: usize, c: usize, what: &str| -> Result<DMatrix<f64>> {
            if rows.len() != r {
                return Err(LtnError::Dimension(format!("{what} must have {r} rows")));
            }
            from_rows(rows, c, what)
        };
        let blocks = |b: &[Vec<Vec<f64>>], what: &str| -> Result<Vec<DMatrix<f64>>> {
            b.iter()
                .map(|rows| {
                    let c = rows.first().map_or(n, |r| r.len());
                    from_rows(rows, c, what)
                })
                .collect()
        };
        Ok(Self {
            kind: j.controller_kind,
            vertex_mode: j.vertex_mode,
            alpha: j.alpha,
            k1: mat(&j.k1, m, n, "K1")?,
            k2: mat(&j.k2, m, n, "K2")?,
            p_bar: mat(&j.p_bar, pn, pn, "P_bar")?,
            s1: blocks(&j.s1, "S1")?,
            s2: blocks(&j.s2, "S2")?,
            gamma: j.gamma,
            zm: mat(&j.zm, n, n, "ZM")?,
            zn: mat(&j.zn, n, n, "ZN")?,
            zu: j.zu.as_deref().map(|z| mat(z, n, n, "ZU")).transpose()?,
            p_min_eig: j.p_min_eig,
            p_condition: j.p_condition,
            residuals: j.residuals,
            solver: j.solver,
        })
    }
}

fn split_blocks(y: &DMatrix<f64>, n: usize, t: usize) -> Vec<DMatrix<f64>> {
    (0..n).map(|i| y.rows(i * t, t).into_owned()).collect()
}

fn rel(num: f64, den: f64) -> f64 {
    num / den.max(1.0)
}

/// Numeric feedforward vertex block `[[P, (aP + R ZS1)'], [aP + R ZS1, P]]`.
pub fn ff_block(p: &DMatrix<f64>, zs1: &DMatrix<f64>, r: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let lower = p * alpha + r * zs1;
    sym_blocks(p, &lower)
}

/// Numeric integral vertex block.
pub fn integral_block(
    p: &DMatrix<f64>,
    zs1: &DMatrix<f64>,
    zs2: &DMatrix<f64>,
    r: &DMatrix<f64>,
    alpha: f64,
) -> DMatrix<f64> {
    let n = zs1.nrows();
    let p11 = p.view((0, 0), (n, n));
    let p12 = p.view((0, n), (n, n));
    let p22 = p.view((n, n), (n, n));
    let mut lower = DMatrix::zeros(2 * n, 2 * n);
    lower.view_mut((0, 0), (n, n)).copy_from(&(p11 * alpha + r * zs1));
    lower.view_mut((0, n), (n, n)).copy_from(&(p12 * alpha + r * zs2));
    lower.view_mut((n, 0), (n, n)).copy_from(&(p11 + p12.transpose()));
    lower.view_mut((n, n), (n, n)).copy_from(&(p12 + p22));
    sym_blocks(p, &lower)
}

fn sym_blocks(p: &DMatrix<f64>, lower: &DMatrix<f64>) -> DMatrix<f64> {
    let k = p.nrows();
    let mut b = DMatrix::zeros(2 * k, 2 * k);
    b.view_mut((0, 0), (k, k)).copy_from(p);
    b.view_mut((k, 0), (k, k)).copy_from(lower);
    b.view_mut((0, k), (k, k)).copy_from(&lower.transpose());
    b.view_mut((k, k), (k, k)).copy_from(p);
    b
}

/// Equality residuals (relative Frobenius) of a candidate certificate.
fn equality_residuals(
    kind: ControllerKind,
    dm: &DataMatrices,
    alpha: f64,
    p: &DMatrix<f64>,
    s1: &[DMatrix<f64>],
    s2: &[DMatrix<f64>],
) -> BTreeMap<String, f64> {
    let n = dm.n;
    let q1 = dm.qt_times(s1);
    let q2 = dm.qt_times(s2);
    let mut out = BTreeMap::new();
    for (name, q) in [("S1", &q1), ("S2", &q2)] {
        let worst = q
            .iter()
            .skip(1)
            .map(|qi| (qi - &q[0]).norm())
            .fold(0.0, f64::max);
        out.insert(format!("decouple {name}"), rel(worst, q[0].norm()));
    }
    let pn = p.norm();
    match kind {
        ControllerKind::Feedforward => {
            let c1s1 = q1[0].rows(0, n).into_owned();
            let c1s2 = q2[0].rows(0, n).into_owned();
            out.insert("C1 Q'S1 = P".into(), rel((c1s1 - p).norm(), pn));
            out.insert("C1 Q'S2 = 0".into(), rel(c1s2.norm(), pn));
            let zs = dm.z_times(s1) + dm.z_times(s2);
            out.insert("Z(S1+S2) = (1-alpha)P".into(), rel((zs - p * (1.0 - alpha)).norm(), pn));
        }
        ControllerKind::Integral => {
            let c1s1 = q1[0].rows(0, n).into_owned();
            let c1s2 = q2[0].rows(0, n).into_owned();
            out.insert("C1 Q'S1 = P11".into(), rel((c1s1 - p.view((0, 0), (n, n))).norm(), pn));
            out.insert("C1 Q'S2 = P12".into(), rel((c1s2 - p.view((0, n), (n, n))).norm(), pn));
        }
    }
    out
}

fn strict_min_eig(kind: ControllerKind, alpha: f64, p: &DMatrix<f64>, zs1: &DMatrix<f64>, zs2: &DMatrix<f64>) -> f64 {
    let eye = DMatrix::identity(zs1.nrows(), zs1.nrows());
    match kind {
        ControllerKind::Feedforward => min_eigenvalue(&ff_block(p, zs1, &eye, alpha)),
        ControllerKind::Integral => min_eigenvalue(&integral_block(p, zs1, zs2, &eye, alpha)),
    }
}

fn check_status(sol: &SdpSolution) -> Result<()> {
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Feasible => Ok(()),
        SolveStatus::Infeasible => Err(LtnError::Infeasible(format!(
            "the LMI conditions have no solution for this data ({})",
            sol.stats.message
        ))),
        SolveStatus::NumericalFailure => Err(LtnError::Numerical(format!("solver failed: {}", sol.stats.message))),
        SolveStatus::Timeout => Err(LtnError::Numerical("solver timed out".into())),
    }
}

fn unpack(prog: &Program, sol: &SdpSolution, dm: &DataMatrices) -> (DMatrix<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, f64) {
    let p = sol.value(&prog.p).expect("values present");
    let s1 = split_blocks(&sol.value(&prog.s1).expect("values present"), dm.n, dm.t_d);
    let s2 = split_blocks(&sol.value(&prog.s2).expect("values present"), dm.n, dm.t_d);
    let g = sol.value(&prog.gamma).expect("values present")[(0, 0)];
    (p, s1, s2, g)
}

fn check_p(p: &DMatrix<f64>, opts: &SynthesisOptions) -> Result<(f64, f64)> {
    let pmin = min_eigenvalue(p);
    if !(pmin > 0.0) {
        return Err(LtnError::Numerical(format!("certificate P is not positive definite (min eigenvalue {pmin:.3e})")));
    }
    let cond = condition_number(p);
    if !(cond <= opts.max_condition) {
        return Err(LtnError::Numerical(format!("certificate P is ill-conditioned (cond {cond:.3e})")));
    }
    Ok((pmin, cond))
}

fn accept_gamma(gamma: f64, opts: &SynthesisOptions) -> Result<()> {
    if gamma < opts.gamma_min {
        return Err(LtnError::Infeasible(format!(
            "best margin gamma = {gamma:.3e} is below {:.1e}; try more data or full vertex mode",
            opts.gamma_min
        )));
    }
    Ok(())
}

pub fn extract_ff_gains(
    prog: &Program,
    sol: &SdpSolution,
    dm: &DataMatrices,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    check_status(sol)?;
    let (n, m, alpha) = (dm.n, dm.m, prog.alpha);
    let (p, s1, s2, g_solver) = unpack(prog, sol, dm);
    let (pmin, cond) = check_p(&p, opts)?;
    let zs1 = dm.z_times(&s1);
    let zs2 = dm.z_times(&s2);
    let gamma = g_solver.min(strict_min_eig(ControllerKind::Feedforward, alpha, &p, &zs1, &zs2));
    accept_gamma(gamma, opts)?;
    let q1 = dm.q_blocks[0].transpose() * &s1[0];
    let q2 = dm.q_blocks[0].transpose() * &s2[0];
    let k1 = right_solve_spd(&q1.rows(n, m).into_owned(), &p)?;
    let k2 = right_solve_spd(&q2.rows(n, m).into_owned(), &p)?;
    let zm = right_solve_spd(&zs1, &p)?;
    let zn = right_solve_spd(&zs2, &p)?;
    let residuals = equality_residuals(ControllerKind::Feedforward, dm, alpha, &p, &s1, &s2);
    Ok(SynthesisResult {
        kind: ControllerKind::Feedforward,
        vertex_mode: prog.vertex_mode,
        alpha,
        k1,
        k2,
        p_bar: p,
        s1,
        s2,
        gamma,
        zm,
        zn,
        zu: None,
        p_min_eig: pmin,
        p_condition: cond,
        residuals,
        solver: SolverInfo::from_solution(sol),
    })
}

pub fn extract_integral_gains(
    prog: &Program,
    sol: &SdpSolution,
    dm: &DataMatrices,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    check_status(sol)?;
    let (n, m, alpha) = (dm.n, dm.m, prog.alpha);
    let (p, s1, s2, g_solver) = unpack(prog, sol, dm);
    let (pmin, cond) = check_p(&p, opts)?;
    let zs1 = dm.z_times(&s1);
    let zs2 = dm.z_times(&s2);
    let gamma = g_solver.min(strict_min_eig(ControllerKind::Integral, alpha, &p, &zs1, &zs2));
    accept_gamma(gamma, opts)?;
    let mut qs = DMatrix::zeros(n + m, 2 * n);
    qs.view_mut((0, 0), (n + m, n)).copy_from(&(dm.q_blocks[0].transpose() * &s1[0]));
    qs.view_mut((0, n), (n + m, n)).copy_from(&(dm.q_blocks[0].transpose() * &s2[0]));
    let k = right_solve_spd(&qs.rows(n, m).into_owned(), &p)?;
    let k1 = k.columns(0, n).into_owned();
    let k2 = k.columns(n, n).into_owned();
    let mut zs = DMatrix::zeros(n, 2 * n);
    zs.view_mut((0, 0), (n, n)).copy_from(&zs1);
    zs.view_mut((0, n), (n, n)).copy_from(&zs2);
    let zmu = right_solve_spd(&zs, &p)?;
    let zm = zmu.columns(0, n).into_owned();
    let zu = zmu.columns(n, n).into_owned();
    let zn = dm.z_times(&dm.solve_n(&(-&k1))?);
    let zu_min = min_singular_value(&zu);
    if !(zu_min > 1e-8) {
        return Err(LtnError::Numerical(format!(
            "Z U is numerically singular (min singular value {zu_min:.3e})"
        )));
    }
    let residuals = equality_residuals(ControllerKind::Integral, dm, alpha, &p, &s1, &s2);
    Ok(SynthesisResult {
        kind: ControllerKind::Integral,
        vertex_mode: prog.vertex_mode,
        alpha,
        k1,
        k2,
        p_bar: p,
        s1,
        s2,
        gamma,
        zm,
        zn,
        zu: Some(zu),
        p_min_eig: pmin,
        p_condition: cond,
        residuals,
        solver: SolverInfo::from_solution(sol),
    })
}

/// Rank conditions implied by the equality constraints alone.
///
/// Integral: the constraints force `Z U = B K2`, which has rank at most `m`.
/// Feedforward: `Z(S1 + S2) = (1 - alpha) P` forces
/// `B X = ((1 - alpha) I - W) P` with `P` invertible, so
/// `rank((1 - alpha) I - W) <= m` is necessary. `W` is read off the data.
pub fn structural_check(dm: &DataMatrices, kind: ControllerKind) -> Result<()> {
    let (n, m) = (dm.n, dm.m);
    if m >= n {
        return Ok(());
    }
    match kind {
        ControllerKind::Integral => Err(LtnError::Infeasible(format!(
            "integral design needs m >= n: Z U = B K2 has rank at most m = {m} < n = {n}"
        ))),
        ControllerKind::Feedforward => {
            let mut a = DMatrix::<f64>::identity(n, n) * (1.0 - dm.alpha);
            for (i, (q, z)) in dm.q_blocks.iter().zip(&dm.z_blocks).enumerate() {
                let theta = min_norm_solve(q, &DMatrix::from_column_slice(z.len(), 1, z.as_slice()));
                for j in 0..n {
                    a[(i, j)] -= theta[(j, 0)];
                }
            }
            let rank = numerical_rank(&a);
            if rank > m {
                Err(LtnError::Infeasible(format!(
                    "feedforward equilibrium needs rank((1 - alpha) I - W) <= m, but it is {rank} > m = {m}"
                )))
            } else {
                Ok(())
            }
        }
    }
}

/// Check richness, assemble, solve and extract gains.
pub fn synthesize(dm: &DataMatrices, kind: ControllerKind, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    let rep = dm.richness();
    if !rep.pass {
        return Err(LtnError::Richness(format!(
            "nodes {:?} have rank below {}",
            rep.deficient_nodes, rep.required_rank
        )));
    }
    structural_check(dm, kind)?;
    let mode = resolve_mode(dm.n, opts, None);
    let prog = assemble_program(dm, kind, mode, opts)?;
    let sol = ltn_sdp::solve(&prog.problem, &opts.solver)?;
    match kind {
        ControllerKind::Feedforward => extract_ff_gains(&prog, &sol, dm, opts),
        ControllerKind::Integral => extract_integral_gains(&prog, &sol, dm, opts),
    }
}

pub const VERTEX_TOL: f64 = 1e-8;
pub const STRICT_RTOL: f64 = 1e-6;
pub const DECOUPLE_TOL: f64 = 1e-8;
pub const EQUALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub p_min_eig: f64,
    pub p_condition: f64,
    pub strict_min_eig: f64,
    pub gamma: f64,
    /// `(label, min eigenvalue)` for every vertex block checked.
    pub vertex_min_eigs: Vec<(String, f64)>,
    pub equality_residuals: BTreeMap<String, f64>,
    pub full_recheck: bool,
    pub failures: Vec<String>,
    pub pass: bool,
}

impl CertificateReport {
    pub fn worst_vertex(&self) -> f64 {
        self.vertex_min_eigs.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min)
    }
}

/// Re-evaluate every condition from `P`, `S1`, `S2` and the data. With
/// `full_recheck`, all `2^n` full-vertex blocks are checked regardless of the
/// mode the result was solved in.
pub fn validate_certificate(res: &SynthesisResult, dm: &DataMatrices, alpha: f64, full_recheck: bool) -> CertificateReport {
    let n = dm.n;
    let p = &res.p_bar;
    let zs1 = dm.z_times(&res.s1);
    let zs2 = dm.z_times(&res.s2);
    let p_min_eig = min_eigenvalue(p);
    let p_condition = condition_number(p);
    let strict = strict_min_eig(res.kind, alpha, p, &zs1, &zs2);
    let block = |r: &DMatrix<f64>| match res.kind {
        ControllerKind::Feedforward => min_eigenvalue(&ff_block(p, &zs1, r, alpha)),
        ControllerKind::Integral => min_eigenvalue(&integral_block(p, &zs1, &zs2, r, alpha)),
    };
    let mut vertex_min_eigs = Vec::new();
    let own = vertex_factors(n, res.vertex_mode, usize::MAX).unwrap_or_default();
    for (label, r) in &own {
        vertex_min_eigs.push((label.clone(), block(r)));
    }
    let recheck = full_recheck && !(res.vertex_mode == VertexMode::Full);
    if recheck {
        if let Ok(set) = enumerate_vertices(n, VertexMode::Full, usize::MAX) {
            for (j, r) in set.matrices().iter().enumerate() {
                vertex_min_eigs.push((format!("full recheck R_{}", j + 1), block(r)));
            }
        }
    }
    let equality_residuals = equality_residuals(res.kind, dm, alpha, p, &res.s1, &res.s2);

    let mut failures = Vec::new();
    if !(p_min_eig > 0.0) {
        failures.push(format!("P is not positive definite (min eigenvalue {p_min_eig:.3e})"));
    }
    if !(strict >= res.gamma * (1.0 - STRICT_RTOL)) || !(res.gamma > 0.0) {
        failures.push(format!("strict block min eigenvalue {strict:.3e} below gamma {:.3e}", res.gamma));
    }
    for (label, v) in &vertex_min_eigs {
        if !(*v >= -VERTEX_TOL) {
            failures.push(format!("{label}: min eigenvalue {v:.3e}"));
        }
    }
    for (label, v) in &equality_residuals {
        let tol = if label.starts_with("decouple") { DECOUPLE_TOL } else { EQUALITY_TOL };
        if !(*v <= tol) {
            failures.push(format!("{label}: residual {v:.3e} exceeds {tol:.0e}"));
        }
    }
    CertificateReport {
        p_min_eig,
        p_condition,
        strict_min_eig: strict,
        gamma: res.gamma,
        vertex_min_eigs,
        equality_residuals,
        full_recheck: recheck,
        pass: failures.is_empty(),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_and_selectors() {
        let c = build_constant_matrices(3, 1).unwrap();
        assert_eq!(c.l, DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0]));
        assert!((&c.l * DVector::from_element(3, 1.0)).amax() == 0.0);
        let c = build_constant_matrices(1, 2).unwrap();
        assert_eq!(c.l[(0, 0)], 0.0);
        let c = build_constant_matrices(2, 1).unwrap();
        let stack = DMatrix::from_fn(6, 1, |i, _| i as f64 + 1.0);
        assert_eq!((&c.c1 * &stack).as_slice(), &[1.0, 2.0]);
        assert_eq!((&c.c2 * &stack).as_slice(), &[3.0]);
        assert_eq!(c.cal_l.shape(), (6, 6));
    }

    #[test]
    fn vertex_sets() {
        let full = enumerate_vertices(2, VertexMode::Full, 16).unwrap();
        assert_eq!(full.len(), 4);
        assert_eq!(full.diagonals[0], DVector::from_element(2, 1.0));
        assert!(full.diagonals.contains(&DVector::zeros(2)));
        assert!(full.diagonals.contains(&DVector::from_row_slice(&[1.0, 0.0])));
        assert!(full.diagonals.contains(&DVector::from_row_slice(&[0.0, 1.0])));
        assert_eq!(enumerate_vertices(4, VertexMode::Full, 16).unwrap().len(), 16);
        let red = enumerate_vertices(4, VertexMode::Reduced, 16).unwrap();
        assert_eq!(red.len(), 5);
        assert_eq!(red.diagonals[0], DVector::zeros(4));
        assert!(enumerate_vertices(17, VertexMode::Full, 16).is_err());
    }
}
