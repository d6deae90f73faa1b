//! Data-driven stabilization of linear-threshold networks.
//!
//! The plant is `x+ = alpha x + [W x + B u]_0^s`. Controllers are designed
//! from sampled `(x, u, x+)` triples only: [`data`] turns samples into the
//! block data matrices, [`synthesis`] poses and solves the LMI programs and
//! extracts gains, and [`closed_loop`] runs the gains against the true plant.

pub mod closed_loop;
pub mod data;
pub mod model;
pub mod scenarios;
pub mod synthesis;
mod util;

use thiserror::Error;

pub use closed_loop::{ClosedLoopTrace, Controller, FeedforwardController, IntegralController};
pub use data::{DataMatrices, DataSet, RichnessReport};
pub use model::{threshold_clamp, DisturbanceSpec, LtnSystem, SimulationTrace};
pub use synthesis::{ControllerKind, SynthesisOptions, SynthesisResult, VertexMode};

#[derive(Debug, Error)]
pub enum LtnError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("inadmissible: {0}")]
    Inadmissible(String),
    #[error("data not rich enough: {0}")]
    Richness(String),
    #[error("synthesis infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Sdp(#[from] ltn_sdp::SdpError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LtnError>;
