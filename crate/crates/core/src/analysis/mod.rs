//! Norm estimators, rate fitting, manufactured solutions and parameter sweeps.

mod mms;
mod norms;
pub mod plot;
mod rate;
mod sweep;

use thiserror::Error;

use crate::discretize::DiscretizeError;
use crate::linsolve::LinsolveError;
use crate::pia::PiaError;
use crate::problem::ProblemError;

pub use mms::{manufactured_convergence, manufactured_solution_error, MmsError};
pub use norms::{derivative_sup, holder_seminorm, weighted_h1_error, Ball};
pub use rate::{fit_geometric_rate, RateFit};
pub use sweep::{
    epsilon_floor_sweep, rho_scaling_sweep, scaled_quantities, FloorRow, FloorSweep, FloorSweepOptions, RhoRow,
    RhoSweep, SCALED_QUANTITIES,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Invalid(String),
    #[error("region contains no grid nodes")]
    EmptyRegion,
    #[error("ball extends beyond the core region")]
    BallOutsideCore,
    #[error("rate fit needs at least 5 points in the window, got {got}")]
    TooFewPoints { got: usize },
    #[error("error e_{index} = {value} is not positive")]
    NonPositive { index: usize, value: f64 },
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Linsolve(#[from] LinsolveError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Pia(Box<PiaError>),
}
