//! Policy iteration for entropy-regularized stochastic control.
//!
//! A control problem ([`problem`]) is discretized on a box ([`discretize`]);
//! [`pia`] alternates Gibbs policy updates ([`policy`]) with linear
//! policy-evaluation solves ([`linsolve`]). [`analysis`], [`mcoracle`] and
//! [`verify`] measure and cross-check the results.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod discretize;
pub mod linsolve;
pub mod mcoracle;
pub mod pia;
pub mod policy;
pub mod problem;
pub mod verify;

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Problem(#[from] problem::ProblemError),
    #[error(transparent)]
    Discretize(#[from] discretize::DiscretizeError),
    #[error(transparent)]
    Policy(#[from] policy::PolicyError),
    #[error(transparent)]
    Linsolve(#[from] linsolve::LinsolveError),
    #[error(transparent)]
    Pia(#[from] pia::PiaError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    MonteCarlo(#[from] mcoracle::McError),
    #[error(transparent)]
    Verify(#[from] verify::VerifyError),
}
