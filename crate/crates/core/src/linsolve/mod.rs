//! Assembly and solution of the policy-evaluation equation
//! `ρv − b̄·Dv − ½tr(Σ̄D²v) = r̄ − λH̄` on a grid.

mod solvers;
mod sparse;
pub(crate) mod stencil;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{Grid, ScalarField};
use crate::policy::AveragedCoefficients;
use crate::problem::{ControlProblem, MAX_DIM};

pub use sparse::CsrMatrix;
use stencil::{Layout, LocalCoefficients, NodeKind};

/// Relative residual target of every solve.
pub const SOLVER_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LinsolveError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("diffusion matrix not symmetric at node {node}: {a} vs {b}")]
    NonSymmetric { node: usize, a: f64, b: f64 },
    #[error("zero pivot in column {column} of the banded factorization")]
    Singular { column: usize },
    #[error("linear solve failed; relative residual history {history:?}")]
    Breakdown { history: Vec<f64> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Boundary treatment of the truncated box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BoundaryCondition {
    ZeroDirichlet,
    /// `±2·A1·ρ⁻¹(1+|x|²)^{N/2}`, with the sign of `r̄` at the node.
    BoundDirichlet {
        n: f64,
        a1: f64,
    },
    /// Zero second normal derivative; drift pointing out of the box is dropped.
    LinearExtrapolation,
    /// Last node along each axis duplicates the first.
    Periodic,
}

/// Boundary tag as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    ZeroDirichlet,
    BoundDirichlet,
    #[default]
    LinearExtrapolation,
    Periodic,
}

impl BoundaryKind {
    pub fn resolve(self, problem: &ControlProblem) -> BoundaryCondition {
        match self {
            BoundaryKind::ZeroDirichlet => BoundaryCondition::ZeroDirichlet,
            BoundaryKind::BoundDirichlet => BoundaryCondition::BoundDirichlet {
                n: problem.growth.n,
                a1: problem.growth.a1,
            },
            BoundaryKind::LinearExtrapolation => BoundaryCondition::LinearExtrapolation,
            BoundaryKind::Periodic => BoundaryCondition::Periodic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearOperatorSystem {
    pub grid: Grid,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub bc: BoundaryCondition,
    /// Periodic copies `(node, canonical node)`, encoded as rows `v_node − v_canonical = 0`.
    pub duplicates: Vec<(usize, usize)>,
    pub rho: f64,
}

impl LinearOperatorSystem {
    /// Positive diagonal (at least ρ on operator rows) and non-positive off-diagonals.
    pub fn is_m_matrix(&self) -> bool {
        (0..self.matrix.n).all(|i| {
            let mut diag_ok = false;
            let mut off_ok = true;
            let identity = self.matrix.row_len(i) == 1 || self.duplicates.iter().any(|d| d.0 == i);
            for (c, v) in self.matrix.row(i) {
                if c == i {
                    diag_ok = if identity {
                        v > 0.0
                    } else {
                        v >= self.rho * (1.0 - 1e-14)
                    };
                } else if v > 0.0 {
                    off_ok = false;
                }
            }
            diag_ok && off_ok
        })
    }

    pub fn max_row_len(&self) -> usize {
        (0..self.matrix.n).map(|i| self.matrix.row_len(i)).max().unwrap_or(0)
    }

    /// `‖Av − rhs‖₂ / ‖rhs‖₂` (absolute when the right-hand side vanishes).
    pub fn relative_residual(&self, v: &[f64]) -> f64 {
        let r = self.matrix.residual_norm(v, &self.rhs);
        let b = self.rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
        if b > 0.0 {
            r / b
        } else {
            r
        }
    }

    /// Writes `row col value` lines.
    pub fn write_coo(&self, path: &Path) -> Result<(), LinsolveError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "% {} {} {}", self.matrix.n, self.matrix.n, self.matrix.vals.len())?;
        for i in 0..self.matrix.n {
            for (c, v) in self.matrix.row(i) {
                writeln!(w, "{i} {c} {v:e}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn local_coefficients(coeffs: &AveragedCoefficients, i: usize) -> LocalCoefficients {
    LocalCoefficients {
        b: coeffs.b_bar.values[i],
        b_plus: coeffs.b_plus.values[i],
        b_minus: coeffs.b_minus.values[i],
        sigma: coeffs.sigma_bar.values[i],
        central: coeffs.drift_central[i],
    }
}

/// Matrix row, right-hand side and, for periodic duplicates, the source node.
type AssembledRow = (Vec<(usize, f64)>, f64, Option<usize>);

pub fn assemble_operator(
    grid: &Grid,
    coeffs: &AveragedCoefficients,
    rho: f64,
    lambda: f64,
    bc: &BoundaryCondition,
) -> Result<LinearOperatorSystem, LinsolveError> {
    let n = grid.len();
    let d = grid.dim();
    let shapes = [
        coeffs.r_bar.values.len(),
        coeffs.b_bar.values.len(),
        coeffs.b_plus.values.len(),
        coeffs.b_minus.values.len(),
        coeffs.sigma_bar.values.len(),
        coeffs.h_bar.values.len(),
        coeffs.drift_central.len(),
    ];
    if shapes.iter().any(|&s| s != n) || coeffs.r_bar.grid.n() != grid.n() {
        return Err(LinsolveError::Shape(format!(
            "coefficient fields {shapes:?} on a grid of {n} nodes"
        )));
    }
    if d == 2 {
        for (i, s) in coeffs.sigma_bar.values.iter().enumerate() {
            let tol = 1e-12 * (s[0][1].abs() + s[1][0].abs() + s[0][0].abs() + s[1][1].abs()).max(1e-300);
            if (s[0][1] - s[1][0]).abs() > tol {
                return Err(LinsolveError::NonSymmetric {
                    node: i,
                    a: s[0][1],
                    b: s[1][0],
                });
            }
        }
    }
    let layout = Layout { grid, bc };
    let source = coeffs.source(lambda);
    let rows: Vec<AssembledRow> = (0..n)
        .into_par_iter()
        .map(|i| match layout.kind(i) {
            NodeKind::Duplicate(c) => (vec![(i, 1.0), (c, -1.0)], 0.0, Some(c)),
            NodeKind::Dirichlet => {
                let value = match bc {
                    BoundaryCondition::BoundDirichlet { n, a1 } => {
                        let x = grid.coord(i);
                        let norm = x[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
                        let bound = 2.0 * a1 / rho * (1.0 + norm * norm).powf(n / 2.0);
                        if coeffs.r_bar.values[i] < 0.0 {
                            -bound
                        } else {
                            bound
                        }
                    }
                    _ => 0.0,
                };
                (vec![(i, 1.0)], value, None)
            }
            NodeKind::Operator => {
                let st = layout.stencils(i);
                let mut terms = Vec::with_capacity(16);
                st.generator_terms(&local_coefficients(coeffs, i), d, &mut terms);
                for t in &mut terms {
                    t.1 = -t.1;
                }
                terms.push((i, rho));
                (terms, source[i], None)
            }
        })
        .collect();
    let mut duplicates = Vec::new();
    let mut rhs = Vec::with_capacity(n);
    let mut mat_rows = Vec::with_capacity(n);
    for (i, (row, b, dup)) in rows.into_iter().enumerate() {
        if let Some(c) = dup {
            duplicates.push((i, c));
        }
        mat_rows.push(row);
        rhs.push(b);
    }
    let system = LinearOperatorSystem {
        grid: grid.clone(),
        matrix: CsrMatrix::from_rows(mat_rows),
        rhs,
        bc: *bc,
        duplicates,
        rho,
    };
    if d == 2 && coeffs.sigma_bar.values.iter().any(|s| s[0][1] != 0.0) && !system.is_m_matrix() {
        log::warn!("cross-diffusion terms present: assembled operator is not an M-matrix, comparison checks disabled");
    }
    Ok(system)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveStats {
    pub method: &'static str,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// New position of each reduced unknown for the banded factorization.
///
/// Periodic axes use the folded order `0, m−1, 1, m−2, …` so wrap-around
/// neighbours stay within distance two.
fn band_ordering(extent: &[usize], periodic: bool) -> Vec<usize> {
    let fold = |m: usize, j: usize| {
        if !periodic {
            j
        } else if 2 * j < m {
            2 * j
        } else {
            2 * (m - 1 - j) + 1
        }
    };
    let total: usize = extent.iter().product();
    (0..total)
        .map(|flat| {
            let mut rest = flat;
            let mut idx = [0usize; MAX_DIM];
            for k in (0..extent.len()).rev() {
                idx[k] = rest % extent[k];
                rest /= extent[k];
            }
            (0..extent.len()).fold(0, |acc, k| acc * extent[k] + fold(extent[k], idx[k]))
        })
        .collect()
}

pub fn solve_policy_evaluation(system: &LinearOperatorSystem) -> Result<ScalarField, LinsolveError> {
    solve_with_stats(system, None).map(|(v, _)| v)
}

/// Solves the system; `guess` seeds the iterative solver.
pub fn solve_with_stats(
    system: &LinearOperatorSystem,
    guess: Option<&[f64]>,
) -> Result<(ScalarField, SolveStats), LinsolveError> {
    let grid = &system.grid;
    let n = grid.len();
    let d = grid.dim();
    let periodic = matches!(system.bc, BoundaryCondition::Periodic);

    // Reduced system without periodic copies.
    let mut is_dup = vec![false; n];
    for &(i, _) in &system.duplicates {
        is_dup[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !is_dup[i]).collect();
    let mut reduced_index = vec![usize::MAX; n];
    for (r, &i) in keep.iter().enumerate() {
        reduced_index[i] = r;
    }
    let rows = keep
        .iter()
        .map(|&i| {
            system
                .matrix
                .row(i)
                .map(|(c, v)| (reduced_index[c], v))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    if rows.iter().flatten().any(|e| e.0 == usize::MAX) {
        return Err(LinsolveError::Shape("operator row references a periodic copy".into()));
    }
    let a = CsrMatrix::from_rows(rows);
    let b: Vec<f64> = keep.iter().map(|&i| system.rhs[i]).collect();
    let extent: Vec<usize> = (0..d)
        .map(|k| if periodic { grid.n()[k] - 1 } else { grid.n()[k] })
        .collect();

    let expand = |x: &[f64]| {
        let mut full = vec![0.0; n];
        for (r, &i) in keep.iter().enumerate() {
            full[i] = x[r];
        }
        for &(i, c) in &system.duplicates {
            full[i] = full[c];
        }
        full
    };

    let direct = |history: Vec<f64>| -> Result<(Vec<f64>, SolveStats), LinsolveError> {
        let perm = band_ordering(&extent, periodic);
        let lu = solvers::BandLu::factor(&a, &perm).map_err(|column| LinsolveError::Singular { column })?;
        let mut x = lu.solve(&perm, &b);
        // One step of iterative refinement.
        let mut r = vec![0.0; a.n];
        a.matvec(&x, &mut r);
        let corr_rhs: Vec<f64> = b.iter().zip(&r).map(|(bi, ri)| bi - ri).collect();
        let corr = lu.solve(&perm, &corr_rhs);
        for (xi, ci) in x.iter_mut().zip(&corr) {
            *xi += ci;
        }
        let full = expand(&x);
        let res = system.relative_residual(&full);
        if res > SOLVER_TOL {
            let mut history = history;
            history.push(res);
            return Err(LinsolveError::Breakdown { history });
        }
        Ok((
            full,
            SolveStats {
                method: "banded-lu",
                iterations: 1,
                relative_residual: res,
            },
        ))
    };

    let (values, stats) = if d == 1 {
        direct(Vec::new())?
    } else {
        let x0: Vec<f64> = match guess {
            Some(g) if g.len() == n => keep.iter().map(|&i| g[i]).collect(),
            _ => vec![0.0; a.n],
        };
        let out = solvers::bicgstab(&a, &b, &x0, 0.1 * SOLVER_TOL, 20 * a.n.max(100));
        let full = expand(&out.x);
        let res = system.relative_residual(&full);
        if out.converged && res <= SOLVER_TOL {
            (
                full,
                SolveStats {
                    method: "bicgstab-jacobi",
                    iterations: out.iterations,
                    relative_residual: res,
                },
            )
        } else {
            log::warn!(
                "BiCGSTAB stopped after {} iterations at residual {res:.3e}; falling back to banded LU",
                out.iterations
            );
            direct(out.history)?
        }
    };
    Ok((
        ScalarField {
            grid: grid.clone(),
            values,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{MatrixField, VectorField};

    fn constant_coeffs(grid: &Grid, r: f64, b: [f64; 2], sigma: [[f64; 2]; 2]) -> AveragedCoefficients {
        let n = grid.len();
        AveragedCoefficients::from_fields(
            ScalarField {
                grid: grid.clone(),
                values: vec![r; n],
            },
            VectorField {
                grid: grid.clone(),
                values: vec![b; n],
            },
            MatrixField {
                grid: grid.clone(),
                values: vec![sigma; n],
            },
            ScalarField::zeros(grid),
        )
    }

    #[test]
    fn hand_assembled_row() {
        let g = Grid::new(&[(-1.0, 1.0)], &[9], 1.0).unwrap();
        let h = g.h()[0];
        let c = constant_coeffs(&g, 3.0, [0.0, 0.0], [[1.0, 0.0], [0.0, 0.0]]);
        let sys = assemble_operator(&g, &c, 2.0, 1.0, &BoundaryCondition::ZeroDirichlet).unwrap();
        let row: Vec<(usize, f64)> = sys.matrix.row(4).collect();
        assert_eq!(row.len(), 3);
        assert!((row[1].1 - (2.0 + 1.0 / (h * h))).abs() < 1e-12);
        assert!((row[0].1 + 0.5 / (h * h)).abs() < 1e-12);
        assert!((row[2].1 + 0.5 / (h * h)).abs() < 1e-12);
        assert_eq!(sys.rhs[4], 3.0);
        assert_eq!(sys.matrix.row(0).collect::<Vec<_>>(), vec![(0, 1.0)]);
        assert!(sys.is_m_matrix());
    }

    #[test]
    fn constant_solution_in_every_boundary_mode() {
        let c0 = 1.7;
        let rho = 2.5;
        for d in [1usize, 2] {
            let bounds = vec![(-1.0, 1.0); d];
            let g = Grid::new(&bounds, &vec![9; d], 1.0).unwrap();
            let c = constant_coeffs(&g, c0, [0.3, -0.2], [[1.0, 0.0], [0.0, 1.0]]);
            for bc in [BoundaryCondition::LinearExtrapolation, BoundaryCondition::Periodic] {
                let sys = assemble_operator(&g, &c, rho, 1.0, &bc).unwrap();
                let v = solve_policy_evaluation(&sys).unwrap();
                assert!(v.values.iter().all(|x| (x - c0 / rho).abs() < 1e-12), "{bc:?} d={d}");
            }
        }
    }

    #[test]
    fn barrier_boundary_value() {
        let g = Grid::new(&[(-2.0, 2.0)], &[9], 1.0).unwrap();
        let c = constant_coeffs(&g, 1.0, [0.0, 0.0], [[1.0, 0.0], [0.0, 0.0]]);
        let bc = BoundaryCondition::BoundDirichlet { n: 2.0, a1: 1.0 };
        let sys = assemble_operator(&g, &c, 10.0, 1.0, &bc).unwrap();
        assert!((sys.rhs[0] - 1.0).abs() < 1e-15);
        assert!((sys.rhs[8] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn band_ordering_is_a_permutation() {
        for periodic in [false, true] {
            let p = band_ordering(&[5, 4], periodic);
            let mut s = p.clone();
            s.sort_unstable();
            assert_eq!(s, (0..20).collect::<Vec<_>>());
        }
        assert_eq!(band_ordering(&[5], true), vec![0, 2, 4, 3, 1]);
    }

    #[test]
    fn rejects_asymmetric_diffusion() {
        let g = Grid::new(&[(-1.0, 1.0), (-1.0, 1.0)], &[5, 5], 1.0).unwrap();
        let c = constant_coeffs(&g, 0.0, [0.0, 0.0], [[1.0, 0.2], [0.1, 1.0]]);
        assert!(matches!(
            assemble_operator(&g, &c, 1.0, 1.0, &BoundaryCondition::ZeroDirichlet),
            Err(LinsolveError::NonSymmetric { .. })
        ));
    }
}
