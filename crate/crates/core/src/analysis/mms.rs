//! Manufactured solutions for the policy-evaluation operator.
//!
//! The operator is assembled for the uniform policy of the problem, its right
//! hand side replaced by the exact image of `w(x) = A·Π sin(x_k)`, and the
//! discrete solution compared with `w` at the core nodes. Non-periodic boxes
//! take exact Dirichlet data so only the interior scheme is measured.

use serde::Serialize;

use super::{weighted_h1_error, AnalysisError, Ball};
use crate::discretize::ScalarField;
use crate::linsolve::{assemble_operator, solve_with_stats, BoundaryCondition};
use crate::pia::Discretization;
use crate::policy::{average_table, CoefficientTable, PolicyField};
use crate::problem::{ControlProblem, MAX_DIM};

/// `(w, Dw, D²w)` for `w = A·Π_k sin(x_k)`.
fn manufactured(x: &[f64], amplitude: f64) -> (f64, [f64; MAX_DIM], [[f64; MAX_DIM]; MAX_DIM]) {
    let d = x.len();
    let (s, c): (Vec<f64>, Vec<f64>) = x.iter().map(|v| (v.sin(), v.cos())).unzip();
    let mut g = [0.0; MAX_DIM];
    let mut hess = [[0.0; MAX_DIM]; MAX_DIM];
    let prod_except = |skip: &[usize]| (0..d).filter(|k| !skip.contains(k)).map(|k| s[k]).product::<f64>();
    for k in 0..d {
        g[k] = amplitude * c[k] * prod_except(&[k]);
        hess[k][k] = -amplitude * s[k] * prod_except(&[k]);
        for l in 0..d {
            if l != k {
                hess[k][l] = amplitude * c[k] * c[l] * prod_except(&[k, l]);
            }
        }
    }
    (amplitude * s.iter().product::<f64>(), g, hess)
}

#[derive(Debug, Clone, Serialize)]
pub struct MmsError {
    pub h: f64,
    /// `max_core |v_h − w|`
    pub sup_error: f64,
    /// Weighted H¹ error on the unit ball at the core centre.
    pub weighted_error: f64,
}

pub fn manufactured_solution_error(
    problem: &ControlProblem,
    disc: &Discretization,
    amplitude: f64,
) -> Result<MmsError, AnalysisError> {
    let grid = &disc.grid;
    let d = grid.dim();
    let table =
        CoefficientTable::build(problem, grid, &disc.quad).map_err(|e| AnalysisError::Invalid(e.to_string()))?;
    let coeffs = average_table(&table, &PolicyField::uniform(grid, &disc.quad));
    let bc = match disc.bc {
        BoundaryCondition::Periodic => BoundaryCondition::Periodic,
        _ => BoundaryCondition::ZeroDirichlet,
    };
    let mut system = assemble_operator(grid, &coeffs, problem.rho, problem.lambda, &bc)?;
    let exact = ScalarField::from_fn(grid, |x| manufactured(x, amplitude).0);
    let is_dup: Vec<bool> = {
        let mut v = vec![false; grid.len()];
        for &(i, _) in &system.duplicates {
            v[i] = true;
        }
        v
    };
    for i in 0..grid.len() {
        system.rhs[i] = if is_dup[i] {
            0.0
        } else if bc == BoundaryCondition::ZeroDirichlet && grid.is_boundary(i) {
            exact.values[i]
        } else {
            let x = grid.coord(i);
            let (w, g, hess) = manufactured(&x[..d], amplitude);
            let b = coeffs.b_bar.values[i];
            let s = coeffs.sigma_bar.values[i];
            let mut rhs = problem.rho * w;
            for k in 0..d {
                rhs -= b[k] * g[k];
                for l in 0..d {
                    rhs -= 0.5 * s[k][l] * hess[k][l];
                }
            }
            rhs
        };
    }
    let (v, _) = solve_with_stats(&system, None)?;
    let e = v.sub(&exact)?;
    let center: Vec<f64> = grid.core_bounds().iter().map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(MmsError {
        h: grid.h().iter().fold(0.0f64, |m, &h| m.max(h)),
        sup_error: e.core_sup_norm(),
        weighted_error: weighted_h1_error(&v, &exact, problem.rho, &Ball::unit(&center))?,
    })
}

/// Errors on `levels` successively halved grids, starting from `disc`.
pub fn manufactured_convergence(
    problem: &ControlProblem,
    disc: &Discretization,
    amplitude: f64,
    levels: usize,
) -> Result<Vec<MmsError>, AnalysisError> {
    (0..levels)
        .map(|k| manufactured_solution_error(problem, &disc.refined(1 << k), amplitude))
        .collect()
}
