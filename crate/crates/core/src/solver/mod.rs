//! Minimization of the transport-plus-energy objectives on a grid.

mod config;
mod drivers;
mod engine;
mod stationarity;

use thiserror::Error;

use crate::functionals::FunctionalError;
use crate::measure::MeasureError;
use crate::transport::TransportError;

pub use config::{
    BarrierDiagnostics, HomothetyFit, LineSearch, LinfBoundCheck, SolverConfig, SolverReport, Termination,
};
pub use drivers::{joint_objective, multistart_nu, solve_joint, solve_mu, solve_nu, solve_nu_barrier};
pub use stationarity::{fw_direction, optimality_report, stationarity_report, OptimalityReport, PotentialSource};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("density {density:e} at node {index} fell below the positivity floor")]
    BarrierBreach { index: usize, density: f64 },
    #[error("reference measure vanishes at node {index}")]
    NotStrictlyPositive { index: usize },
}
