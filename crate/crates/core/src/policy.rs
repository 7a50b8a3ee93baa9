//! Gibbs policies, entropy, policy-averaged coefficients and the Hamiltonians.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::discretize::{ActionQuadrature, Grid, MatrixField, ScalarField, VectorField};
use crate::problem::{ControlProblem, EvalError, PointCoefficients, MAX_DIM};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("coefficient evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("non-finite Hamiltonian integrand {value} at action node {node}")]
    NonFinite { node: usize, value: f64 },
    #[error("density entry {value} at action node {node} is not positive")]
    NonPositiveDensity { node: usize, value: f64 },
    #[error("density has {got} entries, quadrature has {expected}")]
    Length { expected: usize, got: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `f(u_j) = r + b·p + ½tr(ΣX)`; the trace term is skipped when σ does not depend on `u`.
pub fn hamiltonian_integrand(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    x: &[f64],
    p: &[f64],
    hess: &[[f64; MAX_DIM]; MAX_DIM],
) -> Result<Vec<f64>, PolicyError> {
    let d = problem.state_dim;
    quad.nodes
        .iter()
        .enumerate()
        .map(|(j, u)| {
            let c = problem.eval(x, u)?;
            let mut f = c.r + (0..d).map(|k| c.b[k] * p[k]).sum::<f64>();
            if problem.vol_action_dependent {
                f += 0.5 * trace_product(&c.sigma_sq, hess, d);
            }
            if f.is_finite() {
                Ok(f)
            } else {
                Err(PolicyError::NonFinite { node: j, value: f })
            }
        })
        .collect()
}

fn trace_product(a: &[[f64; MAX_DIM]; MAX_DIM], b: &[[f64; MAX_DIM]; MAX_DIM], d: usize) -> f64 {
    let mut t = 0.0;
    for i in 0..d {
        for k in 0..d {
            t += a[i][k] * b[k][i];
        }
    }
    t
}

/// Normalised Gibbs density `exp(f/λ) / Σ_k w_k exp(f_k/λ)`, computed with a max shift.
pub fn gibbs_density(f: &[f64], weights: &[f64], lambda: f64) -> Vec<f64> {
    let m = f.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = f.iter().map(|v| ((v - m) / lambda).exp()).collect();
    let z: f64 = e.iter().zip(weights).map(|(a, w)| a * w).sum();
    e.into_iter().map(|a| a / z).collect()
}

/// `λ ln Σ_j w_j exp(f_j/λ)`, computed with a max shift.
pub fn log_sum_exp(f: &[f64], weights: &[f64], lambda: f64) -> f64 {
    let m = f.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let z: f64 = f.iter().zip(weights).map(|(v, w)| w * ((v - m) / lambda).exp()).sum();
    m + lambda * z.ln()
}

pub fn gibbs_policy(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    x: &[f64],
    p: &[f64],
    hess: &[[f64; MAX_DIM]; MAX_DIM],
) -> Result<Vec<f64>, PolicyError> {
    let f = hamiltonian_integrand(problem, quad, x, p, hess)?;
    Ok(gibbs_density(&f, &quad.weights, problem.lambda))
}

/// `F(x, p, X) = λ ln ∫ exp(f/λ) du`.
pub fn hamiltonian_f(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    x: &[f64],
    p: &[f64],
    hess: &[[f64; MAX_DIM]; MAX_DIM],
) -> Result<f64, PolicyError> {
    let f = hamiltonian_integrand(problem, quad, x, p, hess)?;
    Ok(log_sum_exp(&f, &quad.weights, problem.lambda))
}

/// `∫ (f − λ ln π) π du` for a given density row.
pub fn f_pi(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    x: &[f64],
    p: &[f64],
    hess: &[[f64; MAX_DIM]; MAX_DIM],
    density: &[f64],
) -> Result<f64, PolicyError> {
    if density.len() != quad.len() {
        return Err(PolicyError::Length {
            expected: quad.len(),
            got: density.len(),
        });
    }
    if let Some((node, &value)) = density.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
        return Err(PolicyError::NonPositiveDensity { node, value });
    }
    let f = hamiltonian_integrand(problem, quad, x, p, hess)?;
    Ok(f_pi_from_integrand(&f, &quad.weights, problem.lambda, density))
}

pub fn f_pi_from_integrand(f: &[f64], weights: &[f64], lambda: f64, density: &[f64]) -> f64 {
    f.iter()
        .zip(weights)
        .zip(density)
        .map(|((f, w), pi)| w * pi * (f - lambda * pi.ln()))
        .sum()
}

/// Coefficients `r, b, Σ` at every (grid node, action node) pair.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    pub n_actions: usize,
    /// Indexed `node · n_actions + action`.
    pub values: Vec<PointCoefficients>,
}

impl CoefficientTable {
    pub fn build(
        problem: &ControlProblem,
        grid: &Grid,
        quad: &ActionQuadrature,
    ) -> Result<CoefficientTable, PolicyError> {
        let na = quad.len();
        let values = (0..grid.len() * na)
            .into_par_iter()
            .map(|k| {
                let x = grid.coord(k / na);
                problem.eval(&x, &quad.nodes[k % na]).map_err(PolicyError::from)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CoefficientTable { n_actions: na, values })
    }

    pub fn at(&self, node: usize, action: usize) -> &PointCoefficients {
        &self.values[node * self.n_actions + action]
    }
}

/// Density `π(x_i, u_j)` on grid × action nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub grid: Grid,
    pub quad: ActionQuadrature,
    /// Indexed `node · n_actions + action`.
    pub density: Vec<f64>,
}

impl PolicyField {
    pub fn uniform(grid: &Grid, quad: &ActionQuadrature) -> PolicyField {
        PolicyField {
            grid: grid.clone(),
            quad: quad.clone(),
            density: vec![1.0; grid.len() * quad.len()],
        }
    }

    /// Gibbs policy from per-node integrand rows `f(x_i, u_j)`.
    pub fn from_integrands(grid: &Grid, quad: &ActionQuadrature, lambda: f64, f: &[f64]) -> PolicyField {
        let na = quad.len();
        let density = f
            .par_chunks(na)
            .flat_map_iter(|row| gibbs_density(row, &quad.weights, lambda))
            .collect();
        PolicyField {
            grid: grid.clone(),
            quad: quad.clone(),
            density,
        }
    }

    pub fn row(&self, node: usize) -> &[f64] {
        let na = self.quad.len();
        &self.density[node * na..(node + 1) * na]
    }

    /// Largest deviation of `Σ_j w_j π(i, j)` from one.
    pub fn normalization_error(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let s: f64 = self.row(i).iter().zip(&self.quad.weights).map(|(p, w)| p * w).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `H(x_i) = Σ_j w_j π ln π` from the stored densities.
    pub fn entropy(&self) -> ScalarField {
        let values = (0..self.grid.len())
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(&self.quad.weights)
                    .map(|(p, w)| w * p * p.ln())
                    .sum()
            })
            .collect();
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }

    /// One row per (node, action node): coordinates, action coordinates, weight, density.
    pub fn write_csv(&self, path: &Path) -> Result<(), PolicyError> {
        let d = self.grid.dim();
        let l = self.quad.dim;
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        header.extend((1..=l).map(|k| format!("u{k}")));
        header.push("weight".into());
        header.push("density".into());
        w.write_record(&header)?;
        for i in 0..self.grid.len() {
            let x = self.grid.coord(i);
            for (j, p) in self.row(i).iter().enumerate() {
                let mut rec: Vec<String> = x[..d].iter().map(|v| v.to_string()).collect();
                rec.extend(self.quad.nodes[j][..l].iter().map(|v| v.to_string()));
                rec.push(self.quad.weights[j].to_string());
                rec.push(p.to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Policy averages of the coefficients.
///
/// `b_plus`/`b_minus` hold the averages of the positive and negative parts of
/// each drift component, used by per-action upwinding.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedCoefficients {
    pub r_bar: ScalarField,
    pub b_bar: VectorField,
    pub b_plus: VectorField,
    pub b_minus: VectorField,
    pub sigma_bar: MatrixField,
    pub h_bar: ScalarField,
    /// Per node and axis: central drift differencing keeps the operator monotone
    /// for every action (`h·max_u|b_k| ≤ min_u Σ_kk`). Policy independent.
    pub drift_central: Vec<[bool; MAX_DIM]>,
}

impl AveragedCoefficients {
    /// Coefficients given directly as averaged fields; the drift scheme is chosen
    /// from the averaged values.
    pub fn from_fields(
        r_bar: ScalarField,
        b_bar: VectorField,
        sigma_bar: MatrixField,
        h_bar: ScalarField,
    ) -> AveragedCoefficients {
        let grid = r_bar.grid.clone();
        let d = grid.dim();
        let part = |sign: f64| VectorField {
            grid: grid.clone(),
            values: b_bar
                .values
                .iter()
                .map(|b| {
                    let mut o = [0.0; MAX_DIM];
                    for k in 0..d {
                        o[k] = (sign * b[k]).max(0.0);
                    }
                    o
                })
                .collect(),
        };
        let drift_central = b_bar
            .values
            .iter()
            .zip(&sigma_bar.values)
            .map(|(b, s)| {
                let mut c = [false; MAX_DIM];
                for k in 0..d {
                    c[k] = grid.h()[k] * b[k].abs() <= s[k][k];
                }
                c
            })
            .collect();
        AveragedCoefficients {
            b_plus: part(1.0),
            b_minus: part(-1.0),
            r_bar,
            b_bar,
            sigma_bar,
            h_bar,
            drift_central,
        }
    }

    /// `r̄ − λH̄`, the source of the policy-evaluation equation.
    pub fn source(&self, lambda: f64) -> Vec<f64> {
        self.r_bar
            .values
            .iter()
            .zip(&self.h_bar.values)
            .map(|(r, h)| r - lambda * h)
            .collect()
    }
}

/// Per node and axis: whether central drift differencing keeps every per-action
/// generator monotone, i.e. `h_k·max_u|b_k| ≤ min_u Σ_kk`.
pub fn drift_central_mask(table: &CoefficientTable, grid: &Grid) -> Vec<[bool; MAX_DIM]> {
    let d = grid.dim();
    (0..grid.len())
        .map(|i| {
            let mut central = [false; MAX_DIM];
            for (k, ck) in central.iter_mut().enumerate().take(d) {
                let (mut bmax, mut smin) = (0.0f64, f64::INFINITY);
                for j in 0..table.n_actions {
                    let c = table.at(i, j);
                    bmax = bmax.max(c.b[k].abs());
                    smin = smin.min(c.sigma_sq[k][k]);
                }
                *ck = grid.h()[k] * bmax <= smin;
            }
            central
        })
        .collect()
}

pub fn average_table(table: &CoefficientTable, policy: &PolicyField) -> AveragedCoefficients {
    let grid = &policy.grid;
    let d = grid.dim();
    let w = &policy.quad.weights;
    let per_node: Vec<_> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let row = policy.row(i);
            let mut r = 0.0;
            let mut b = [0.0; MAX_DIM];
            let mut bp = [0.0; MAX_DIM];
            let mut bm = [0.0; MAX_DIM];
            let mut s = [[0.0; MAX_DIM]; MAX_DIM];
            for (j, (pi, wj)) in row.iter().zip(w).enumerate() {
                let m = wj * pi;
                let c = table.at(i, j);
                r += m * c.r;
                for k in 0..d {
                    b[k] += m * c.b[k];
                    bp[k] += m * c.b[k].max(0.0);
                    bm[k] += m * (-c.b[k]).max(0.0);
                    for l in 0..d {
                        s[k][l] += m * c.sigma_sq[k][l];
                    }
                }
            }
            (r, b, bp, bm, s)
        })
        .collect();
    let field = |values| VectorField {
        grid: grid.clone(),
        values,
    };
    AveragedCoefficients {
        r_bar: ScalarField {
            grid: grid.clone(),
            values: per_node.iter().map(|t| t.0).collect(),
        },
        b_bar: field(per_node.iter().map(|t| t.1).collect()),
        b_plus: field(per_node.iter().map(|t| t.2).collect()),
        b_minus: field(per_node.iter().map(|t| t.3).collect()),
        sigma_bar: MatrixField {
            grid: grid.clone(),
            values: per_node.iter().map(|t| t.4).collect(),
        },
        h_bar: policy.entropy(),
        drift_central: drift_central_mask(table, grid),
    }
}

pub fn averaged_coefficients(
    problem: &ControlProblem,
    policy: &PolicyField,
) -> Result<AveragedCoefficients, PolicyError> {
    let table = CoefficientTable::build(problem, &policy.grid, &policy.quad)?;
    Ok(average_table(&table, policy))
}
