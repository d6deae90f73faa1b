//! The linear-threshold network plant and its simulator.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::util::{check_len, from_rows, rows_of};
use crate::{LtnError, Result};

/// Slack allowed when checking the admissible state box.
pub const BOX_SLACK: f64 = 1e-12;

/// Componentwise `min(max(v, 0), s)`.
pub fn threshold_clamp(v: &DVector<f64>, s: f64) -> Result<DVector<f64>> {
    if !(s > 0.0) {
        return Err(LtnError::InvalidParameter(format!("saturation level must be positive, got {s}")));
    }
    Ok(v.map(|x| x.max(0.0).min(s)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtnSystem {
    n: usize,
    m: usize,
    alpha: f64,
    s: f64,
    w: DMatrix<f64>,
    b: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct SystemJson {
    n: usize,
    m: usize,
    alpha: f64,
    s: f64,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

impl LtnSystem {
    pub fn new(alpha: f64, s: f64, w: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(LtnError::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(LtnError::InvalidParameter(format!("s must be positive, got {s}")));
        }
        let n = w.nrows();
        if n == 0 || w.ncols() != n {
            return Err(LtnError::Dimension(format!("W must be square and non-empty, got {:?}", w.shape())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(LtnError::Dimension(format!("B must be {n} x m with m >= 1, got {:?}", b.shape())));
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(LtnError::InvalidParameter("W and B must be finite".into()));
        }
        Ok(Self {
            n,
            m: b.ncols(),
            alpha,
            s,
            w,
            b,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn s(&self) -> f64 {
        self.s
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `s / (1 - alpha)`, the upper edge of the invariant state box.
    pub fn state_upper_bound(&self) -> f64 {
        self.s / (1.0 - self.alpha)
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(x, self.n, "state")?;
        check_len(u, self.m, "input")?;
        let pre = &self.w * x + &self.b * u;
        Ok(x * self.alpha + threshold_clamp(&pre, self.s)?)
    }

    pub fn step_with_disturbance(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len(x, self.n, "state")?;
        check_len(u, self.m, "input")?;
        check_len(w, self.n, "disturbance")?;
        let pre = &self.w * x + &self.b * u + w;
        Ok(x * self.alpha + threshold_clamp(&pre, self.s)?)
    }

    pub fn is_admissible(&self, x: &DVector<f64>) -> bool {
        let ub = self.state_upper_bound();
        x.len() == self.n && x.iter().all(|&v| v >= -BOX_SLACK && v <= ub + BOX_SLACK)
    }

    pub fn check_admissible(&self, x: &DVector<f64>) -> Result<()> {
        check_len(x, self.n, "initial state")?;
        if !self.is_admissible(x) {
            return Err(LtnError::Inadmissible(format!(
                "initial state must lie in [0, {:.6}] componentwise",
                self.state_upper_bound()
            )));
        }
        Ok(())
    }

    /// Project onto the admissible box.
    pub fn clamp_to_box(&self, x: &DVector<f64>) -> DVector<f64> {
        let ub = self.state_upper_bound();
        x.map(|v| v.max(0.0).min(ub))
    }

    pub fn to_json(&self) -> String {
        let j = SystemJson {
            n: self.n,
            m: self.m,
            alpha: self.alpha,
            s: self.s,
            w: rows_of(&self.w),
            b: rows_of(&self.b),
        };
        serde_json::to_string_pretty(&j).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: SystemJson = serde_json::from_str(text)?;
        if j.w.len() != j.n || j.b.len() != j.n {
            return Err(LtnError::Dimension("W and B must have n rows".into()));
        }
        let w = from_rows(&j.w, j.n, "W")?;
        let b = from_rows(&j.b, j.m, "B")?;
        Self::new(j.alpha, j.s, w, b)
    }
}

/// Additive disturbance on the pre-activation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSpec {
    #[default]
    None,
    /// Every component i.i.d. uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl DisturbanceSpec {
    /// Parse `none` or `uniform:LO:HI`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("none") {
            return Ok(Self::None);
        }
        let parts: Vec<&str> = t.split(':').collect();
        if parts.len() == 3 && parts[0] == "uniform" {
            let lo: f64 = parts[1]
                .parse()
                .map_err(|_| LtnError::InvalidParameter(format!("bad disturbance bound '{}'", parts[1])))?;
            let hi: f64 = parts[2]
                .parse()
                .map_err(|_| LtnError::InvalidParameter(format!("bad disturbance bound '{}'", parts[2])))?;
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(LtnError::InvalidParameter(format!("empty disturbance box [{lo}, {hi}]")));
            }
            return Ok(Self::Uniform { lo, hi });
        }
        Err(LtnError::InvalidParameter(format!(
            "disturbance must be 'none' or 'uniform:LO:HI', got '{text}'"
        )))
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }

    pub fn label(&self) -> String {
        match self {
            Self::None => "none".into(),
            Self::Uniform { lo, hi } => format!("uniform:{lo}:{hi}"),
        }
    }
}

/// Seeded disturbance draws.
#[derive(Debug, Clone)]
pub struct DisturbanceStream {
    spec: DisturbanceSpec,
    rng: ChaCha8Rng,
}

impl DisturbanceStream {
    pub fn new(spec: DisturbanceSpec, seed: u64) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next(&mut self, n: usize) -> DVector<f64> {
        match self.spec {
            DisturbanceSpec::None => DVector::zeros(n),
            DisturbanceSpec::Uniform { lo, hi } => {
                DVector::from_fn(n, |_, _| uniform(&mut self.rng, lo, hi))
            }
        }
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Anything that maps (time, state) to an input.
pub trait InputPolicy {
    fn input(&mut self, t: usize, x: &DVector<f64>) -> DVector<f64>;
}

impl<F: FnMut(usize, &DVector<f64>) -> DVector<f64>> InputPolicy for F {
    fn input(&mut self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        self(t, x)
    }
}

pub struct ConstantInput(pub DVector<f64>);

impl InputPolicy for ConstantInput {
    fn input(&mut self, _t: usize, _x: &DVector<f64>) -> DVector<f64> {
        self.0.clone()
    }
}

/// Fresh uniform input in `[lo, hi]^m` every step.
pub struct RandomBoxInput {
    m: usize,
    lo: f64,
    hi: f64,
    rng: ChaCha8Rng,
}

impl RandomBoxInput {
    pub fn new(m: usize, lo: f64, hi: f64, seed: u64) -> Self {
        Self {
            m,
            lo,
            hi,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl InputPolicy for RandomBoxInput {
    fn input(&mut self, _t: usize, _x: &DVector<f64>) -> DVector<f64> {
        let (lo, hi) = (self.lo, self.hi);
        DVector::from_fn(self.m, |_, _| uniform(&mut self.rng, lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// `T + 1` states.
    pub states: Vec<DVector<f64>>,
    /// `T` inputs; `inputs[t]` drives `states[t] -> states[t + 1]`.
    pub inputs: Vec<DVector<f64>>,
    /// `T` disturbance draws (zeros when no disturbance).
    pub disturbances: Vec<DVector<f64>>,
}

impl SimulationTrace {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// CSV with header `t,x1..xn,u1..um`; the final row has empty inputs.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",x{i}").unwrap();
        }
        for j in 1..=m {
            write!(out, ",u{j}").unwrap();
        }
        out.push('\n');
        for (t, x) in self.states.iter().enumerate() {
            write!(out, "{t}").unwrap();
            for v in x.iter() {
                write!(out, ",{v}").unwrap();
            }
            match self.inputs.get(t) {
                Some(u) => u.iter().for_each(|v| write!(out, ",{v}").unwrap()),
                None => (0..m).for_each(|_| out.push(',')),
            }
            out.push('\n');
        }
        out
    }
}

/// Iterate the plant for `horizon` steps from an admissible `x0`.
pub fn simulate(
    sys: &LtnSystem,
    x0: &DVector<f64>,
    policy: &mut dyn InputPolicy,
    horizon: usize,
    seed: u64,
    disturbance: DisturbanceSpec,
) -> Result<SimulationTrace> {
    sys.check_admissible(x0)?;
    let mut noise = DisturbanceStream::new(disturbance, seed);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut disturbances = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    states.push(x.clone());
    for t in 0..horizon {
        let u = policy.input(t, &x);
        let w = noise.next(sys.n());
        x = sys.step_with_disturbance(&x, &u, &w)?;
        states.push(x.clone());
        inputs.push(u);
        disturbances.push(w);
    }
    Ok(SimulationTrace {
        states,
        inputs,
        disturbances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_sys(alpha: f64, s: f64, w: f64, b: f64) -> LtnSystem {
        LtnSystem::new(alpha, s, DMatrix::from_element(1, 1, w), DMatrix::from_element(1, 1, b)).unwrap()
    }

    #[test]
    fn clamp_examples() {
        let v = |xs: &[f64]| DVector::from_row_slice(xs);
        assert_eq!(threshold_clamp(&v(&[0.5]), 0.3984).unwrap(), v(&[0.3984]));
        assert_eq!(threshold_clamp(&v(&[0.1]), 1.0).unwrap(), v(&[0.1]));
        assert_eq!(threshold_clamp(&v(&[-0.2, 2.0]), 1.0).unwrap(), v(&[0.0, 1.0]));
        assert!(threshold_clamp(&v(&[0.1]), 0.0).is_err());
    }

    #[test]
    fn step_examples() {
        let sys = scalar_sys(0.9, 1.0, 0.0, 0.0);
        let x = DVector::from_element(1, 1.0);
        let u = DVector::zeros(1);
        assert!((sys.step(&x, &u).unwrap()[0] - 0.9).abs() < 1e-15);

        let sys = scalar_sys(0.5, 1.0, 0.2, 1.0);
        let u = DVector::from_element(1, 0.3);
        assert!((sys.step(&x, &u).unwrap()[0] - 1.0).abs() < 1e-15);

        let sys = scalar_sys(0.5, 1.0, 0.0, 0.0);
        let w = DVector::from_element(1, 0.1);
        let x0 = DVector::zeros(1);
        assert!((sys.step_with_disturbance(&x0, &DVector::zeros(1), &w).unwrap()[0] - 0.1).abs() < 1e-15);
        assert!(sys.step(&DVector::zeros(2), &DVector::zeros(1)).is_err());
    }

    #[test]
    fn simulate_geometric_decay_and_zero_horizon() {
        let sys = scalar_sys(0.9, 1.0, 0.0, 0.0);
        let x0 = DVector::from_element(1, 1.0);
        let mut pol = ConstantInput(DVector::zeros(1));
        let tr = simulate(&sys, &x0, &mut pol, 2, 0, DisturbanceSpec::None).unwrap();
        let xs: Vec<f64> = tr.states.iter().map(|x| x[0]).collect();
        assert!((xs[1] - 0.9).abs() < 1e-15 && (xs[2] - 0.81).abs() < 1e-15);
        let tr0 = simulate(&sys, &x0, &mut pol, 0, 0, DisturbanceSpec::None).unwrap();
        assert_eq!(tr0.states.len(), 1);
        let bad = DVector::from_element(1, 11.0);
        assert!(simulate(&sys, &bad, &mut pol, 1, 0, DisturbanceSpec::None).is_err());
    }

    #[test]
    fn disturbance_spec_parsing() {
        assert_eq!(DisturbanceSpec::parse("none").unwrap(), DisturbanceSpec::None);
        assert_eq!(
            DisturbanceSpec::parse("uniform:0:0.2").unwrap(),
            DisturbanceSpec::Uniform { lo: 0.0, hi: 0.2 }
        );
        assert!(DisturbanceSpec::parse("uniform:1:0").is_err());
        assert!(DisturbanceSpec::parse("gauss:0:1").is_err());
    }

    #[test]
    fn json_round_trip() {
        let sys = LtnSystem::new(
            0.7,
            0.3,
            DMatrix::from_row_slice(2, 2, &[0.1, -0.2, 0.3, 0.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -0.5]),
        )
        .unwrap();
        let back = LtnSystem::from_json(&sys.to_json()).unwrap();
        assert_eq!(back, sys);
        assert!(sys.to_json().contains("\"W\""));
    }
}
