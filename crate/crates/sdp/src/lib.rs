//! Semidefinite programs over named matrix variables.
//!
//! A problem is a set of affine matrix expressions that must be positive
//! semidefinite, a set that must vanish, and a linear objective to maximize.
//! [`solve`] runs the configured backend and re-evaluates every constraint
//! at the returned point before reporting success.

mod export;
mod ipm;
mod presolve;
pub mod problem;
pub mod solution;

use std::time::Instant;

use thiserror::Error;

pub use export::{ProblemJson, FORMAT_TAG};
pub use problem::{EqConstraint, LinearForm, MatExpr, PsdConstraint, SdpProblem, Variable};
pub use solution::{
    min_eigenvalue, ResidualReport, SdpSolution, SolveStatus, SolverSettings, SolverStats,
};

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("unknown solver backend '{0}' (available: ipm)")]
    UnknownBackend(String),
    #[error("invalid problem file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Environment variable selecting the backend.
pub const SOLVER_ENV: &str = "LTN_SOLVER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Bundled presolve + primal-dual interior point.
    #[default]
    InteriorPoint,
}

impl Backend {
    pub fn from_name(name: &str) -> Result<Self, SdpError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "" | "ipm" | "default" => Ok(Backend::InteriorPoint),
            other => Err(SdpError::UnknownBackend(other.to_string())),
        }
    }

    /// Backend named by `LTN_SOLVER`, defaulting to the interior-point method.
    pub fn from_env() -> Result<Self, SdpError> {
        match std::env::var(SOLVER_ENV) {
            Ok(v) => Self::from_name(&v),
            Err(_) => Ok(Backend::default()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::InteriorPoint => "ipm",
        }
    }
}

/// Solve with the backend selected by `LTN_SOLVER`.
pub fn solve(problem: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution, SdpError> {
    solve_with(problem, settings, Backend::from_env()?)
}

pub fn solve_with(
    problem: &SdpProblem,
    settings: &SolverSettings,
    backend: Backend,
) -> Result<SdpSolution, SdpError> {
    problem.validate()?;
    let start = Instant::now();
    let mut stats = SolverStats {
        backend: backend.name().to_string(),
        ..Default::default()
    };
    let (lmi, recovery) = match presolve::presolve(problem, settings) {
        presolve::Presolved::Infeasible(msg) => {
            stats.message = msg;
            stats.solve_time_s = start.elapsed().as_secs_f64();
            return Ok(SdpSolution::without_values(SolveStatus::Infeasible, stats));
        }
        presolve::Presolved::Unbounded(msg) => {
            stats.message = format!("unbounded: {msg}");
            stats.solve_time_s = start.elapsed().as_secs_f64();
            return Ok(SdpSolution::without_values(SolveStatus::NumericalFailure, stats));
        }
        presolve::Presolved::TooLarge(msg) => {
            stats.message = format!("problem too large for the bundled backend: {msg}");
            stats.solve_time_s = start.elapsed().as_secs_f64();
            return Ok(SdpSolution::without_values(SolveStatus::NumericalFailure, stats));
        }
        presolve::Presolved::Reduced(lmi, recovery) => (lmi, recovery),
    };
    stats.reduced_dim = lmi.dim();

    let (status, z) = if lmi.dim() == 0 || lmi.block_sizes.is_empty() {
        let z = nalgebra::DVector::zeros(lmi.dim());
        let worst = lmi
            .eval_blocks(&z)
            .iter()
            .map(min_eigenvalue)
            .fold(f64::INFINITY, f64::min);
        if worst >= -settings.feas_tol {
            (SolveStatus::Optimal, z)
        } else {
            stats.message = format!("fixed LMI has min eigenvalue {worst:.3e}");
            (SolveStatus::Infeasible, z)
        }
    } else {
        let outcome = ipm::solve(&lmi, settings, start);
        stats.iterations = outcome.iterations;
        stats.message = outcome.message;
        let status = match outcome.status {
            ipm::IpmStatus::Optimal => SolveStatus::Optimal,
            ipm::IpmStatus::Stalled => SolveStatus::Feasible,
            ipm::IpmStatus::Infeasible => SolveStatus::Infeasible,
            ipm::IpmStatus::Unbounded => SolveStatus::NumericalFailure,
            ipm::IpmStatus::NumericalFailure => SolveStatus::NumericalFailure,
            ipm::IpmStatus::Timeout => SolveStatus::Timeout,
        };
        (status, outcome.z)
    };
    stats.solve_time_s = start.elapsed().as_secs_f64();
    if !status.has_values() {
        return Ok(SdpSolution::without_values(status, stats));
    }

    let y = recovery.scalars(&z);
    let report = ResidualReport::evaluate(problem, &y);
    if !report.within(settings.feas_tol) {
        stats.message = format!(
            "re-evaluation failed: worst PSD eigenvalue {:.3e}, worst equality residual {:.3e}",
            report.worst_psd(),
            report.worst_equality()
        );
        return Ok(SdpSolution::without_values(SolveStatus::NumericalFailure, stats));
    }
    let objective = problem.objective_value(&y);
    Ok(SdpSolution {
        status,
        scalars: Some(y),
        objective: Some(objective),
        stats,
    })
}
