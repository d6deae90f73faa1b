//! Controllers run against the true plant, switching matrices, Lyapunov
//! values and steady-state metrics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{DisturbanceSpec, DisturbanceStream, LtnSystem};
use crate::synthesis::{ControllerKind, SynthesisResult};
use crate::util::{check_len, min_singular_value};
use crate::{LtnError, Result};

/// Required distance of an integral reference from the box edges.
pub const INTERIOR_MARGIN: f64 = 1e-6;

/// `u = K1 x + K2 r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardController {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub r: DVector<f64>,
}

/// `u = K1 (x - r) + K2 xi`, `xi+ = xi + (x - r)`, `xi(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralController {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub r: DVector<f64>,
    pub xi: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    Feedforward(FeedforwardController),
    Integral(IntegralController),
}

impl Controller {
    pub fn feedforward(k1: DMatrix<f64>, k2: DMatrix<f64>, r: DVector<f64>) -> Self {
        Self::Feedforward(FeedforwardController { k1, k2, r })
    }

    pub fn integral(k1: DMatrix<f64>, k2: DMatrix<f64>, r: DVector<f64>) -> Self {
        let n = r.len();
        Self::Integral(IntegralController {
            k1,
            k2,
            r,
            xi: DVector::zeros(n),
        })
    }

    pub fn from_result(res: &SynthesisResult, r: DVector<f64>) -> Self {
        match res.kind {
            ControllerKind::Feedforward => Self::feedforward(res.k1.clone(), res.k2.clone(), r),
            ControllerKind::Integral => Self::integral(res.k1.clone(), res.k2.clone(), r),
        }
    }

    pub fn reference(&self) -> &DVector<f64> {
        match self {
            Self::Feedforward(c) => &c.r,
            Self::Integral(c) => &c.r,
        }
    }

    pub fn xi(&self) -> Option<&DVector<f64>> {
        match self {
            Self::Feedforward(_) => None,
            Self::Integral(c) => Some(&c.xi),
        }
    }

    pub fn input(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Feedforward(c) => &c.k1 * x + &c.k2 * &c.r,
            Self::Integral(c) => &c.k1 * (x - &c.r) + &c.k2 * &c.xi,
        }
    }

    /// Advance internal state after `x` has been used.
    pub fn advance(&mut self, x: &DVector<f64>) {
        if let Self::Integral(c) = self {
            c.xi += x - &c.r;
        }
    }

    fn validate(&self, sys: &LtnSystem) -> Result<()> {
        let (k1, k2, r) = match self {
            Self::Feedforward(c) => (&c.k1, &c.k2, &c.r),
            Self::Integral(c) => (&c.k1, &c.k2, &c.r),
        };
        check_len(r, sys.n(), "reference")?;
        for (name, k) in [("K1", k1), ("K2", k2)] {
            if k.shape() != (sys.m(), sys.n()) {
                return Err(LtnError::Dimension(format!(
                    "{name} is {:?}, expected {:?}",
                    k.shape(),
                    (sys.m(), sys.n())
                )));
            }
        }
        check_reference(sys, r, matches!(self, Self::Integral(_)))
    }
}

/// `0 <= r <= s/(1-alpha)`; integral control needs a strictly interior `r`.
pub fn check_reference(sys: &LtnSystem, r: &DVector<f64>, interior: bool) -> Result<()> {
    let ub = sys.state_upper_bound();
    let margin = if interior { INTERIOR_MARGIN } else { 0.0 };
    if r.iter().any(|&v| !(v >= margin && v <= ub - margin)) {
        let what = if interior { "strictly inside" } else { "inside" };
        return Err(LtnError::Inadmissible(format!("reference must lie {what} [0, {ub:.6}]")));
    }
    Ok(())
}

/// Data needed to evaluate `V` along a trace.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub p_bar: DMatrix<f64>,
    pub xi_star: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub r: DVector<f64>,
    /// `T + 1` states.
    pub states: Vec<DVector<f64>>,
    /// `T` inputs.
    pub inputs: Vec<DVector<f64>>,
    /// `T + 1` integrator values (integral control only).
    pub xi: Option<Vec<DVector<f64>>>,
    pub eps_inf: Vec<f64>,
    /// `T + 1` Lyapunov values when a certificate was supplied.
    pub v: Option<Vec<f64>>,
    pub disturbances: Vec<DVector<f64>>,
}

impl ClosedLoopTrace {
    pub fn final_error_inf(&self) -> f64 {
        *self.eps_inf.last().expect("non-empty trace")
    }

    /// CSV with header `t,x1..xn,u1..um[,xi1..xin],eps_inf,V`.
    pub fn to_csv(&self) -> String {
        let n = self.r.len();
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut out = String::from("t");
        (1..=n).for_each(|i| write!(out, ",x{i}").unwrap());
        (1..=m).for_each(|j| write!(out, ",u{j}").unwrap());
        if self.xi.is_some() {
            (1..=n).for_each(|i| write!(out, ",xi{i}").unwrap());
        }
        out.push_str(",eps_inf,V\n");
        for (t, x) in self.states.iter().enumerate() {
            write!(out, "{t}").unwrap();
            x.iter().for_each(|v| write!(out, ",{v}").unwrap());
            match self.inputs.get(t) {
                Some(u) => u.iter().for_each(|v| write!(out, ",{v}").unwrap()),
                None => (0..m).for_each(|_| out.push(',')),
            }
            if let Some(xi) = &self.xi {
                xi[t].iter().for_each(|v| write!(out, ",{v}").unwrap());
            }
            write!(out, ",{}", self.eps_inf[t]).unwrap();
            match &self.v {
                Some(v) => writeln!(out, ",{}", v[t]).unwrap(),
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

/// Run `ctrl` on the true plant for `horizon` steps.
pub fn run_closed_loop(
    sys: &LtnSystem,
    ctrl: &Controller,
    x0: &DVector<f64>,
    horizon: usize,
    disturbance: DisturbanceSpec,
    seed: u64,
    cert: Option<&Certificate>,
) -> Result<ClosedLoopTrace> {
    sys.check_admissible(x0)?;
    ctrl.validate(sys)?;
    let mut ctrl = ctrl.clone();
    let r = ctrl.reference().clone();
    let mut noise = DisturbanceStream::new(disturbance, seed);
    let lyap = |x: &DVector<f64>, xi: Option<&DVector<f64>>| -> Result<Option<f64>> {
        let Some(c) = cert else { return Ok(None) };
        let eps = x - &r;
        let v = match (xi, &c.xi_star) {
            (Some(xi), Some(xs)) => {
                let e = xi - xs;
                let mut z = DVector::zeros(2 * eps.len());
                z.rows_mut(0, eps.len()).copy_from(&eps);
                z.rows_mut(eps.len(), eps.len()).copy_from(&e);
                lyapunov_value(&c.p_bar, &z)?
            }
            (Some(_), None) => {
                return Err(LtnError::InvalidParameter("integral certificate needs xi*".into()))
            }
            _ => lyapunov_value(&c.p_bar, &eps)?,
        };
        Ok(Some(v))
    };

    let mut x = x0.clone();
    let mut states = vec![x.clone()];
    let mut inputs = Vec::with_capacity(horizon);
    let mut xis = ctrl.xi().map(|xi| vec![xi.clone()]);
    let mut eps_inf = vec![(&x - &r).amax()];
    let mut vs = lyap(&x, ctrl.xi())?.map(|v| vec![v]);
    let mut disturbances = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let u = ctrl.input(&x);
        let w = noise.next(sys.n());
        let next = sys.step_with_disturbance(&x, &u, &w)?;
        ctrl.advance(&x);
        x = next;
        if let (Some(xs), Some(xi)) = (xis.as_mut(), ctrl.xi()) {
            xs.push(xi.clone());
        }
        eps_inf.push((&x - &r).amax());
        if let Some(vs) = vs.as_mut() {
            vs.push(lyap(&x, ctrl.xi())?.expect("certificate present"));
        }
        states.push(x.clone());
        inputs.push(u);
        disturbances.push(w);
    }
    Ok(ClosedLoopTrace {
        r,
        states,
        inputs,
        xi: xis,
        eps_inf,
        v: vs,
        disturbances,
    })
}

/// Diagonal of the switching matrix for pre-activation offset `v` around the
/// equilibrium drive `(1 - alpha) r`: 1 where `v + (1 - alpha) r` stays in
/// `[0, s]`, otherwise `([v + (1 - alpha) r]_0^s - (1 - alpha) r) / v`.
fn switch_entries(v: &DVector<f64>, r: &DVector<f64>, alpha: f64, s: f64) -> Result<DVector<f64>> {
    check_len(r, v.len(), "reference")?;
    let mut out = DVector::from_element(v.len(), 1.0);
    for i in 0..v.len() {
        let base = (1.0 - alpha) * r[i];
        let pre = v[i] + base;
        if pre > s || pre < 0.0 {
            if v[i] == 0.0 {
                return Err(LtnError::Numerical(format!(
                    "switching entry {} has a saturated branch with zero denominator",
                    i + 1
                )));
            }
            out[i] = (pre.clamp(0.0, s) - base) / v[i];
        }
    }
    Ok(out)
}

/// Switching diagonal for the feedforward error dynamics, from `ZM eps`.
pub fn eval_switch_matrix_ff(zm_eps: &DVector<f64>, r: &DVector<f64>, alpha: f64, s: f64) -> Result<DVector<f64>> {
    switch_entries(zm_eps, r, alpha, s)
}

/// Switching diagonal for the integral error dynamics, from `ZM eps + ZU e`.
pub fn eval_switch_matrix_integral(
    zm_eps_zu_e: &DVector<f64>,
    r: &DVector<f64>,
    alpha: f64,
    s: f64,
) -> Result<DVector<f64>> {
    switch_entries(zm_eps_zu_e, r, alpha, s)
}

/// `z' P^-1 z` via a Cholesky solve.
pub fn lyapunov_value(p_bar: &DMatrix<f64>, z: &DVector<f64>) -> Result<f64> {
    check_len(z, p_bar.nrows(), "Lyapunov argument")?;
    let chol = p_bar
        .clone()
        .cholesky()
        .ok_or_else(|| LtnError::Numerical("P is not positive definite".into()))?;
    Ok(z.dot(&chol.solve(z)))
}

/// Solve `ZU xi* = (1 - alpha) r - Z(M + N) r`.
pub fn compute_xi_star(
    zm: &DMatrix<f64>,
    zn: &DMatrix<f64>,
    zu: &DMatrix<f64>,
    alpha: f64,
    r: &DVector<f64>,
) -> Result<DVector<f64>> {
    let smin = min_singular_value(zu);
    if !(smin > 1e-8) {
        return Err(LtnError::Numerical(format!(
            "Z U is numerically singular (min singular value {smin:.3e}); xi* is undefined"
        )));
    }
    let rhs = r * (1.0 - alpha) - (zm + zn) * r;
    let xi = zu
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| LtnError::Numerical("Z U solve failed".into()))?;
    let resid = (zu * &xi - &rhs).amax();
    if resid > 1e-8 * (1.0 + rhs.amax()) {
        return Err(LtnError::Numerical(format!("xi* residual {resid:.3e}")));
    }
    Ok(xi)
}

/// Equilibrium integrator value for an integral result.
pub fn xi_star_for(res: &SynthesisResult, r: &DVector<f64>) -> Result<DVector<f64>> {
    let zu = res
        .zu
        .as_ref()
        .ok_or_else(|| LtnError::InvalidParameter("xi* needs an integral synthesis result".into()))?;
    compute_xi_star(&res.zm, &res.zn, zu, res.alpha, r)
}

pub fn certificate_for(res: &SynthesisResult, r: &DVector<f64>) -> Result<Certificate> {
    Ok(Certificate {
        p_bar: res.p_bar.clone(),
        xi_star: match res.kind {
            ControllerKind::Feedforward => None,
            ControllerKind::Integral => Some(xi_star_for(res, r)?),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateMetrics {
    pub window: usize,
    /// Trailing mean of `|x_i - r_i|` per component.
    pub mean_abs_error_per_state: Vec<f64>,
    pub mean_abs_error: f64,
    /// Largest `|x_i - r_i|` in the window.
    pub max_error: f64,
    pub final_error_inf: f64,
    pub settling_tol: f64,
    /// First step after which `||x - r||_inf <= tol` holds for good.
    pub settling_time: Option<usize>,
}

/// Metrics over the trailing `tail_fraction` of the trace.
pub fn steady_state_metrics(trace: &ClosedLoopTrace, tail_fraction: f64, tol: f64) -> Result<SteadyStateMetrics> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(LtnError::InvalidParameter("tail fraction must lie in (0, 1]".into()));
    }
    let window = ((trace.states.len() as f64 * tail_fraction).round() as usize).max(1);
    steady_state_metrics_window(trace, window, tol)
}

/// Metrics over the last `window` states.
pub fn steady_state_metrics_window(trace: &ClosedLoopTrace, window: usize, tol: f64) -> Result<SteadyStateMetrics> {
    let len = trace.states.len();
    if len < 10 {
        return Err(LtnError::InvalidParameter("trace needs at least 10 states".into()));
    }
    let window = window.clamp(1, len);
    let n = trace.r.len();
    let mut per = vec![0.0; n];
    let mut max_error: f64 = 0.0;
    for x in &trace.states[len - window..] {
        for i in 0..n {
            let e = (x[i] - trace.r[i]).abs();
            per[i] += e;
            max_error = max_error.max(e);
        }
    }
    per.iter_mut().for_each(|p| *p /= window as f64);
    let settling_time = match trace.eps_inf.iter().rposition(|&e| e > tol) {
        None => Some(0),
        Some(t) if t + 1 < len => Some(t + 1),
        Some(_) => None,
    };
    Ok(SteadyStateMetrics {
        window,
        mean_abs_error: per.iter().sum::<f64>() / n as f64,
        mean_abs_error_per_state: per,
        max_error,
        final_error_inf: trace.final_error_inf(),
        settling_tol: tol,
        settling_time,
    })
}

/// Error size below which `V` is dominated by round-off: `1e-12 (1 + scale)
/// cond(P)`, with `scale` the largest entry of `r` and `xi*`.
pub fn lyapunov_floor(res: &SynthesisResult, r: &DVector<f64>, xi_star: Option<&DVector<f64>>) -> f64 {
    let scale = xi_star.map_or(0.0, |x| x.amax()).max(r.amax());
    1e-12 * (1.0 + scale) * res.p_condition.max(1.0)
}

/// Steps where `V` failed to decrease strictly while the error exceeded
/// `floor` in the inf-norm. Returns `(violations, checked, smallest relative
/// decrease)`.
pub fn lyapunov_decrease_check(trace: &ClosedLoopTrace, xi_star: Option<&DVector<f64>>, floor: f64) -> Option<(usize, usize, f64)> {
    let v = trace.v.as_ref()?;
    let mut violations = 0;
    let mut checked = 0;
    let mut worst = f64::INFINITY;
    for t in 0..v.len() - 1 {
        let mut size = trace.eps_inf[t];
        if let (Some(xi), Some(xs)) = (&trace.xi, xi_star) {
            size = size.max((&xi[t] - xs).amax());
        }
        if size <= floor {
            continue;
        }
        checked += 1;
        let rel = (v[t] - v[t + 1]) / v[t];
        worst = worst.min(rel);
        if !(rel > 0.0) {
            violations += 1;
        }
    }
    Some((violations, checked, worst))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_examples() {
        let v = DVector::from_element(1, 1.0);
        let r = DVector::from_element(1, 0.8);
        let e = eval_switch_matrix_ff(&v, &r, 0.5, 1.0).unwrap();
        assert!((e[0] - 0.6).abs() < 1e-15);
        let inside = eval_switch_matrix_ff(&DVector::from_element(1, 0.1), &r, 0.5, 1.0).unwrap();
        assert_eq!(inside[0], 1.0);
    }

    #[test]
    fn lyapunov_examples() {
        let p = DMatrix::identity(2, 2);
        assert_eq!(lyapunov_value(&p, &DVector::zeros(2)).unwrap(), 0.0);
        let v = lyapunov_value(&p, &DVector::from_row_slice(&[3.0, 4.0])).unwrap();
        assert!((v - 25.0).abs() < 1e-12);
    }

    #[test]
    fn xi_star_is_zero_when_feedforward_matching_holds() {
        let zm = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.05]);
        let zn = DMatrix::identity(2, 2) * 0.5 - &zm;
        let zu = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.7]);
        let r = DVector::from_row_slice(&[0.3, 0.4]);
        let xs = compute_xi_star(&zm, &zn, &zu, 0.5, &r).unwrap();
        assert!(xs.amax() < 1e-14);
    }
}
