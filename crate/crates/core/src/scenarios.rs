//! Case-study systems and the end-to-end run pipeline.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{
    certificate_for, check_reference, run_closed_loop, steady_state_metrics, ClosedLoopTrace, Controller,
    SteadyStateMetrics,
};
use crate::data::{build_data_matrices, collect_random_dataset, DataMatrices, DataSet, RichnessReport, DEFAULT_EPS_SAT};
use crate::model::{uniform, DisturbanceSpec, LtnSystem};
use crate::synthesis::{synthesize, ControllerKind, SynthesisOptions, SynthesisResult, VertexMode};
use crate::{LtnError, Result};

pub const RODENT_ALPHA: f64 = 0.9728;
pub const RODENT_S: f64 = 0.3984;

#[rustfmt::skip]
pub const RODENT_W: [[f64; 4]; 4] = [
    [0.0,    0.0427, -0.0122,  0.0],
    [0.0084, 0.0,    -0.0003, -0.0009],
    [0.0421, 0.0334,  0.0,     0.0],
    [0.1031, 0.0114, -0.0036,  0.0],
];

#[rustfmt::skip]
pub const RODENT_B: [[f64; 5]; 4] = [
    [ 0.0114, -0.0005, -0.0749, -0.0017, 0.0],
    [-0.0270,  0.0015,  0.2107,  0.0,    0.0],
    [-0.6332,  0.0044, -0.2840,  0.0,    0.0358],
    [-0.7236,  0.0162,  0.5482,  0.0,    0.0207],
];

pub const RODENT_REFERENCE: [f64; 4] = [8.26, 4.42, 10.99, 6.95];
pub const RODENT_T_D: usize = 250;
/// Sampling boxes as published. With them node 3 is clamped at zero for
/// almost every sample and the data fail the richness check.
pub const RODENT_PAPER_X_BOX: (f64, f64) = (0.0, 14.647);
pub const RODENT_PAPER_U_BOX: (f64, f64) = (0.0, 10.0);
/// Default sampling boxes: most activations of every node stay unclamped.
pub const RODENT_X_BOX: (f64, f64) = (0.0, 5.0);
pub const RODENT_U_BOX: (f64, f64) = (0.0, 0.25);
pub const RODENT_DISTURBANCE: DisturbanceSpec = DisturbanceSpec::Uniform { lo: 0.0, hi: 0.2 };

/// The 4-node, 5-input rodent firing-rate network.
pub fn rodent_system() -> LtnSystem {
    let w = DMatrix::from_fn(4, 4, |i, j| RODENT_W[i][j]);
    let b = DMatrix::from_fn(4, 5, |i, j| RODENT_B[i][j]);
    LtnSystem::new(RODENT_ALPHA, RODENT_S, w, b).expect("valid constants")
}

pub fn rodent_reference() -> DVector<f64> {
    DVector::from_row_slice(&RODENT_REFERENCE)
}

pub const AROUSAL_N: usize = 15;
pub const AROUSAL_M: usize = 1;
pub const AROUSAL_ALPHA: f64 = 0.7;
pub const AROUSAL_S: f64 = 0.3;
pub const AROUSAL_RESAMPLE_CAP: usize = 1000;
pub const AROUSAL_T_D: usize = 600;
/// First system seed whose uniform-box data are rich at `AROUSAL_T_D`; most
/// draws have a node whose pre-activation almost never leaves the clamp.
pub const AROUSAL_DEFAULT_SEED: u64 = 21;

#[derive(Debug, Clone)]
pub struct ArousalScenario {
    pub system: LtnSystem,
    /// Readout `a = phi' x` in percent.
    pub phi: DVector<f64>,
    /// Rejected draws before acceptance.
    pub resamples: usize,
    /// Target state with `a(r_T) = 50%`.
    pub target: DVector<f64>,
}

impl ArousalScenario {
    pub fn arousal(&self, x: &DVector<f64>) -> f64 {
        self.phi.dot(x)
    }
}

/// Random 15-node arousal network. `W`, `B` are uniform on `[-0.5, 0.5]`;
/// `phi >= 0` is scaled so the readout spans `[0, 100]` over the state box.
/// Draws are rejected until `phi' B < 0`, so more input lowers arousal.
pub fn arousal_system(seed: u64, cap: usize) -> Result<ArousalScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (AROUSAL_N, AROUSAL_M);
    let ub = AROUSAL_S / (1.0 - AROUSAL_ALPHA);
    for attempt in 0..=cap {
        let w = DMatrix::from_fn(n, n, |_, _| uniform(&mut rng, -0.5, 0.5));
        let b = DMatrix::from_fn(n, m, |_, _| uniform(&mut rng, -0.5, 0.5));
        let raw = DVector::from_fn(n, |_, _| uniform(&mut rng, 0.0, 1.0));
        let phi = &raw * (100.0 / (raw.sum() * ub));
        let sens = phi.transpose() * &b;
        if sens.iter().all(|&v| v < 0.0) {
            let system = LtnSystem::new(AROUSAL_ALPHA, AROUSAL_S, w, b)?;
            let target = DVector::from_element(n, 0.5 * ub);
            return Ok(ArousalScenario {
                system,
                phi,
                resamples: attempt,
                target,
            });
        }
    }
    Err(LtnError::InvalidParameter(format!(
        "no arousal draw satisfied phi'B < 0 within {cap} resamples"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Rodent,
    Arousal,
    /// System read from a JSON file.
    File,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rodent" => Ok(Self::Rodent),
            "arousal" => Ok(Self::Arousal),
            _ => Err(LtnError::InvalidParameter(format!("unknown scenario '{s}' (rodent, arousal)"))),
        }
    }
}

/// Everything needed to reproduce one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub system_file: Option<String>,
    pub controller: ControllerKind,
    /// `None` picks the size-based default.
    pub vertex_mode: Option<VertexMode>,
    pub t_d: usize,
    pub seed_data: u64,
    pub seed_init: u64,
    pub seed_noise: u64,
    pub seed_system: u64,
    /// Closed-loop disturbance; the design data stay clean.
    pub disturbance: DisturbanceSpec,
    pub horizon: usize,
    /// Settling tolerance (inf-norm).
    pub tol: f64,
    pub eps_sat: f64,
    pub reference: Option<Vec<f64>>,
    pub x_box: Option<(f64, f64)>,
    pub u_box: (f64, f64),
    pub tail_fraction: f64,
}

impl RunConfig {
    pub fn rodent(controller: ControllerKind) -> Self {
        Self {
            scenario: Scenario::Rodent,
            system_file: None,
            controller,
            vertex_mode: None,
            t_d: RODENT_T_D,
            seed_data: 1,
            seed_init: 2,
            seed_noise: 3,
            seed_system: 0,
            disturbance: DisturbanceSpec::None,
            horizon: 2000,
            tol: 1e-2,
            eps_sat: DEFAULT_EPS_SAT,
            reference: None,
            x_box: Some(RODENT_X_BOX),
            u_box: RODENT_U_BOX,
            tail_fraction: 0.25,
        }
    }

    pub fn arousal(controller: ControllerKind) -> Self {
        Self {
            scenario: Scenario::Arousal,
            t_d: AROUSAL_T_D,
            seed_system: AROUSAL_DEFAULT_SEED,
            x_box: None,
            u_box: (0.0, 1.0),
            ..Self::rodent(controller)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_d < 1 {
            return Err(LtnError::InvalidParameter("--td must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(LtnError::InvalidParameter("--horizon must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(LtnError::InvalidParameter("--tol must be positive".into()));
        }
        if self.scenario == Scenario::File && self.system_file.is_none() {
            return Err(LtnError::InvalidParameter("a system file is required".into()));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(LtnError::InvalidParameter("tail fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A resolved system with its default reference.
#[derive(Debug, Clone)]
pub struct ResolvedSystem {
    pub system: LtnSystem,
    pub default_reference: DVector<f64>,
    pub arousal: Option<ArousalScenario>,
}

pub fn resolve_system(cfg: &RunConfig, file_contents: Option<&str>) -> Result<ResolvedSystem> {
    match cfg.scenario {
        Scenario::Rodent => Ok(ResolvedSystem {
            system: rodent_system(),
            default_reference: rodent_reference(),
            arousal: None,
        }),
        Scenario::Arousal => {
            let a = arousal_system(cfg.seed_system, AROUSAL_RESAMPLE_CAP)?;
            Ok(ResolvedSystem {
                system: a.system.clone(),
                default_reference: a.target.clone(),
                arousal: Some(a),
            })
        }
        Scenario::File => {
            let text = file_contents.ok_or_else(|| LtnError::InvalidParameter("system file contents missing".into()))?;
            let system = LtnSystem::from_json(text)?;
            let mid = DVector::from_element(system.n(), 0.5 * system.state_upper_bound());
            Ok(ResolvedSystem {
                system,
                default_reference: mid,
                arousal: None,
            })
        }
    }
}

/// Seeded admissible initial state, uniform over the box.
pub fn random_initial_state(sys: &LtnSystem, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ub = sys.state_upper_bound();
    DVector::from_fn(sys.n(), |_, _| uniform(&mut rng, 0.0, ub))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dataset: DataSet,
    pub data: DataMatrices,
    pub richness: RichnessReport,
    pub result: SynthesisResult,
    pub reference: DVector<f64>,
    pub x0: DVector<f64>,
    pub xi_star: Option<DVector<f64>>,
    pub trace: ClosedLoopTrace,
    pub metrics: SteadyStateMetrics,
}

pub fn collect_for(cfg: &RunConfig, sys: &LtnSystem) -> Result<DataSet> {
    let x_box = cfg.x_box.unwrap_or((0.0, sys.state_upper_bound()));
    collect_random_dataset(sys, cfg.t_d, x_box, cfg.u_box, cfg.seed_data, None)
}

/// Collect data, synthesize, and run the closed loop from a seeded start.
pub fn run_pipeline(cfg: &RunConfig, resolved: &ResolvedSystem, opts: &SynthesisOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let sys = &resolved.system;
    let reference = match &cfg.reference {
        Some(r) => DVector::from_row_slice(r),
        None => resolved.default_reference.clone(),
    };
    if reference.len() != sys.n() {
        return Err(LtnError::Dimension(format!("reference has {} entries, expected {}", reference.len(), sys.n())));
    }
    check_reference(sys, &reference, cfg.controller == ControllerKind::Integral)?;
    let dataset = collect_for(cfg, sys)?;
    let data = build_data_matrices(&dataset, sys.alpha(), sys.s(), cfg.eps_sat)?;
    let richness = data.richness();
    let mut opts = opts.clone();
    if cfg.vertex_mode.is_some() {
        opts.vertex_mode = cfg.vertex_mode;
    }
    let result = synthesize(&data, cfg.controller, &opts)?;
    let cert = certificate_for(&result, &reference)?;
    let x0 = random_initial_state(sys, cfg.seed_init);
    let ctrl = Controller::from_result(&result, reference.clone());
    let trace = run_closed_loop(sys, &ctrl, &x0, cfg.horizon, cfg.disturbance, cfg.seed_noise, Some(&cert))?;
    let metrics = steady_state_metrics(&trace, cfg.tail_fraction, cfg.tol)?;
    Ok(RunOutput {
        dataset,
        data,
        richness,
        result,
        reference,
        x0,
        xi_star: cert.xi_star,
        trace,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rodent_constants() {
        let sys = rodent_system();
        assert_eq!(sys.w()[(0, 1)], 0.0427);
        assert_eq!(sys.b()[(2, 0)], -0.6332);
        assert!((sys.state_upper_bound() - 14.647).abs() < 5e-4);
        assert_eq!((sys.n(), sys.m()), (4, 5));
    }

    #[test]
    fn arousal_draw_is_deterministic_and_signed() {
        let a = arousal_system(7, AROUSAL_RESAMPLE_CAP).unwrap();
        let b = arousal_system(7, AROUSAL_RESAMPLE_CAP).unwrap();
        assert_eq!(a.system, b.system);
        assert_eq!(a.phi, b.phi);
        assert!((a.phi.transpose() * a.system.b())[(0, 0)] < 0.0);
        assert_eq!(a.arousal(&DVector::zeros(AROUSAL_N)), 0.0);
        let top = DVector::from_element(AROUSAL_N, a.system.state_upper_bound());
        assert!((a.arousal(&top) - 100.0).abs() < 1e-9);
        assert!((a.arousal(&a.target) - 50.0).abs() < 1e-9);
    }
}
