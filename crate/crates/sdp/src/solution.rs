use std::time::Duration;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::problem::{SdpProblem, Variable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    NumericalFailure,
    Timeout,
}

impl SolveStatus {
    pub fn has_values(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub backend: String,
    pub iterations: usize,
    pub solve_time_s: f64,
    /// Dimension of the reduced LMI handed to the interior-point loop.
    pub reduced_dim: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Flattened scalars; present iff `status.has_values()`.
    pub scalars: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub stats: SolverStats,
}

impl SdpSolution {
    pub fn without_values(status: SolveStatus, stats: SolverStats) -> Self {
        Self {
            status,
            scalars: None,
            objective: None,
            stats,
        }
    }

    /// Dense (column-major) value of a variable.
    pub fn value(&self, var: &Variable) -> Option<DMatrix<f64>> {
        self.scalars.as_ref().map(|y| var.unpack(y))
    }

    pub fn value_by_name(&self, problem: &SdpProblem, name: &str) -> Option<DMatrix<f64>> {
        problem.variable(name).and_then(|v| self.value(v))
    }
}

#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// Re-evaluation tolerance for PSD eigenvalues and equality residuals.
    pub feas_tol: f64,
    /// Relative duality-gap target of the interior-point loop.
    pub gap_tol: f64,
    pub max_iter: usize,
    pub time_limit: Option<Duration>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            gap_tol: 1e-9,
            max_iter: 200,
            time_limit: None,
        }
    }
}

/// Per-constraint re-evaluation of a candidate point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `(label, min eigenvalue)` for every PSD constraint.
    pub psd_min_eig: Vec<(String, f64)>,
    /// `(label, max abs entry)` for every equality constraint.
    pub eq_residual: Vec<(String, f64)>,
}

impl ResidualReport {
    pub fn evaluate(problem: &SdpProblem, y: &[f64]) -> Self {
        let psd_min_eig = problem
            .psd_constraints()
            .iter()
            .map(|c| (c.label.clone(), min_eigenvalue(&c.expr.eval(y))))
            .collect();
        let eq_residual = problem
            .equality_constraints()
            .iter()
            .map(|c| (c.label.clone(), c.expr.eval(y).amax()))
            .collect();
        Self {
            psd_min_eig,
            eq_residual,
        }
    }

    pub fn worst_psd(&self) -> f64 {
        self.psd_min_eig
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn worst_equality(&self) -> f64 {
        self.eq_residual.iter().map(|(_, v)| *v).fold(0.0, f64::max)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.worst_psd() >= -tol && self.worst_equality() <= tol
    }
}

/// Smallest eigenvalue of the symmetric part of `m`; `+inf` for empty input.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}
