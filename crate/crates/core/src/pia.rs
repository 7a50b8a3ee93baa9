//! Policy iteration: Gibbs improvement from the current value, then a linear
//! policy-evaluation solve, repeated until the core increments settle.
//!
//! The improvement step maximises the same discrete generator that the
//! evaluation step assembles, so on monotone (M-matrix) grids the iterates are
//! nondecreasing from the first evaluated value on.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{derivative_sup, holder_seminorm, weighted_h1_error, AnalysisError, Ball};
use crate::discretize::{build_action_quadrature, ActionQuadrature, DiscretizeError, Grid, ScalarField};
use crate::linsolve::stencil::{Layout, LocalCoefficients, NodeStencils};
use crate::linsolve::{
    assemble_operator, solve_with_stats, BoundaryCondition, BoundaryKind, LinsolveError, SolveStats, SOLVER_TOL,
};
use crate::policy::{
    average_table, drift_central_mask, log_sum_exp, AveragedCoefficients, CoefficientTable, PolicyError, PolicyField,
};
use crate::problem::{ControlProblem, MAX_DIM};

#[derive(Debug, Error)]
pub enum PiaError {
    #[error("iteration {iteration}: {source}")]
    Solve {
        iteration: usize,
        #[source]
        source: LinsolveError,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(
        "iteration {iteration}: sup norm {sup_norm:.3e} exceeds 1000× the growth barrier {barrier:.3e}; \
         the discount is likely below the threshold for these coefficients"
    )]
    Diverged {
        iteration: usize,
        sup_norm: f64,
        barrier: f64,
    },
    #[error("reference grid is not a refinement of the experiment grid")]
    NotNested,
}

/// Grid, action quadrature and boundary treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub grid: Grid,
    pub quad: ActionQuadrature,
    pub bc: BoundaryCondition,
}

impl Discretization {
    pub fn new(
        problem: &ControlProblem,
        bounds: &[(f64, f64)],
        n: &[usize],
        core_fraction: f64,
        action_nodes: usize,
        bc: BoundaryKind,
    ) -> Result<Discretization, DiscretizeError> {
        if bounds.len() != problem.state_dim {
            return Err(DiscretizeError::ShapeMismatch(format!(
                "{}-dimensional box for a {}-dimensional problem",
                bounds.len(),
                problem.state_dim
            )));
        }
        Ok(Discretization {
            grid: Grid::new(bounds, n, core_fraction)?,
            quad: build_action_quadrature(problem.action_dim, action_nodes)?,
            bc: bc.resolve(problem),
        })
    }

    pub fn refined(&self, factor: usize) -> Discretization {
        Discretization {
            grid: self.grid.refined(factor),
            quad: self.quad.clone(),
            bc: self.bc,
        }
    }
}

fn default_core_fraction() -> f64 {
    0.5
}

fn default_action_nodes() -> usize {
    8
}

/// Discretization as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSpec {
    /// `[lo, hi]` per axis.
    pub bounds: Vec<(f64, f64)>,
    pub n: Vec<usize>,
    #[serde(default = "default_core_fraction")]
    pub core_fraction: f64,
    /// Gauss–Legendre nodes per action axis.
    #[serde(default = "default_action_nodes")]
    pub action_nodes: usize,
    #[serde(default)]
    pub boundary: BoundaryKind,
}

impl DiscretizationSpec {
    pub fn build(&self, problem: &ControlProblem) -> Result<Discretization, DiscretizeError> {
        Discretization::new(
            problem,
            &self.bounds,
            &self.n,
            self.core_fraction,
            self.action_nodes,
            self.boundary,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    pub max_iters: usize,
    /// Stop once `‖v^{n} − v^{n−1}‖_{∞,core}` falls below this.
    pub delta_tol: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_iters: 40,
            delta_tol: 1e-9,
        }
    }
}

/// What the trace measures besides the iterates themselves.
#[derive(Debug, Clone)]
pub struct TraceOptions<'a> {
    pub alpha: f64,
    pub reference: Option<&'a ScalarField>,
    /// Ball for the weighted H¹ error; defaults to the unit ball at the core centre.
    pub ball: Option<Ball>,
    pub seminorms: bool,
}

impl Default for TraceOptions<'_> {
    fn default() -> Self {
        TraceOptions {
            alpha: 0.5,
            reference: None,
            ball: None,
            seminorms: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub n: usize,
    pub sup_norm: f64,
    /// `‖v^n − v^{n−1}‖_{∞,core}`
    pub increment: f64,
    /// `min_core (v^n − v^{n−1})`
    pub min_increment: f64,
    pub weighted_error: Option<f64>,
    pub sup_error: Option<f64>,
    pub grad_error: Option<f64>,
    pub holder1: Option<f64>,
    pub holder2: Option<f64>,
    pub solver_residual: f64,
    pub solver_iterations: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    fn push(&mut self, r: IterationRecord) {
        debug_assert!(self.records.last().is_none_or(|l| l.n < r.n));
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Smallest `min_core(v^{n+1} − v^n)` over `n ≥ 1`.
    pub fn worst_monotonicity(&self) -> f64 {
        self.records
            .iter()
            .skip(1)
            .map(|r| r.min_increment)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "n",
            "sup_norm",
            "increment",
            "min_increment",
            "weighted_error",
            "sup_error",
            "grad_error",
            "holder1",
            "holder2",
            "solver_residual",
            "solver_iterations",
            "wall_time",
        ])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        for r in &self.records {
            w.write_record([
                r.n.to_string(),
                format!("{:e}", r.sup_norm),
                format!("{:e}", r.increment),
                format!("{:e}", r.min_increment),
                opt(r.weighted_error),
                opt(r.sup_error),
                opt(r.grad_error),
                opt(r.holder1),
                opt(r.holder2),
                format!("{:e}", r.solver_residual),
                r.solver_iterations.to_string(),
                format!("{:.6}", r.wall_time),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PiaState {
    pub n: usize,
    pub v_prev: ScalarField,
    pub policy: PolicyField,
    pub coeffs: AveragedCoefficients,
    pub v: ScalarField,
    pub solve: SolveStats,
}

#[derive(Debug, Clone)]
pub struct PiaOutcome {
    pub trace: IterationTrace,
    pub converged: bool,
    pub state: PiaState,
}

/// Problem bound to a discretization, with coefficient tables and stencils precomputed.
pub struct PiaSolver<'a> {
    pub problem: &'a ControlProblem,
    pub disc: &'a Discretization,
    table: CoefficientTable,
    stencils: Vec<NodeStencils>,
    central: Vec<[bool; MAX_DIM]>,
    core: Vec<usize>,
}

impl<'a> PiaSolver<'a> {
    pub fn new(problem: &'a ControlProblem, disc: &'a Discretization) -> Result<PiaSolver<'a>, PiaError> {
        let table = CoefficientTable::build(problem, &disc.grid, &disc.quad)?;
        let layout = Layout {
            grid: &disc.grid,
            bc: &disc.bc,
        };
        let stencils = (0..disc.grid.len())
            .into_par_iter()
            .map(|i| layout.stencils(i))
            .collect();
        let central = drift_central_mask(&table, &disc.grid);
        Ok(PiaSolver {
            problem,
            disc,
            table,
            stencils,
            central,
            core: disc.grid.core_indices(),
        })
    }

    fn action_coefficients(&self, i: usize, j: usize) -> LocalCoefficients {
        let c = self.table.at(i, j);
        let mut lc = LocalCoefficients {
            b: c.b,
            b_plus: [0.0; MAX_DIM],
            b_minus: [0.0; MAX_DIM],
            sigma: c.sigma_sq,
            central: self.central[i],
        };
        for k in 0..MAX_DIM {
            lc.b_plus[k] = c.b[k].max(0.0);
            lc.b_minus[k] = (-c.b[k]).max(0.0);
        }
        lc
    }

    /// `f(x_i, u_j) = r + (discrete generator of action u_j applied to v)(x_i)`.
    /// The diffusion part is included only when σ depends on the action.
    fn integrands(&self, v: &ScalarField, with_diffusion: bool) -> Vec<f64> {
        let na = self.table.n_actions;
        let d = self.disc.grid.dim();
        (0..self.disc.grid.len() * na)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / na, k % na);
                let lc = self.action_coefficients(i, j);
                self.table.at(i, j).r + self.stencils[i].generator(&lc, d, &v.values, with_diffusion)
            })
            .collect()
    }

    /// Gibbs policy for the value `v`.
    pub fn improve(&self, v: &ScalarField) -> PolicyField {
        let f = self.integrands(v, self.problem.vol_action_dependent);
        PolicyField::from_integrands(&self.disc.grid, &self.disc.quad, self.problem.lambda, &f)
    }

    /// Averaged coefficients and the solution of the policy-evaluation equation.
    pub fn evaluate(
        &self,
        policy: &PolicyField,
        guess: Option<&[f64]>,
    ) -> Result<(AveragedCoefficients, ScalarField, SolveStats), LinsolveError> {
        let coeffs = average_table(&self.table, policy);
        let system = assemble_operator(
            &self.disc.grid,
            &coeffs,
            self.problem.rho,
            self.problem.lambda,
            &self.disc.bc,
        )?;
        let (v, stats) = solve_with_stats(&system, guess)?;
        Ok((coeffs, v, stats))
    }

    pub fn step(&self, v_prev: &ScalarField, n: usize) -> Result<PiaState, PiaError> {
        let policy = self.improve(v_prev);
        let (coeffs, v, solve) = self
            .evaluate(&policy, Some(&v_prev.values))
            .map_err(|source| PiaError::Solve { iteration: n, source })?;
        Ok(PiaState {
            n,
            v_prev: v_prev.clone(),
            policy,
            coeffs,
            v,
            solve,
        })
    }

    /// Discrete HJB residual `max_core |ρv − λ ln Σ_j w_j exp(f_j/λ)|` with the full generator.
    pub fn hjb_residual(&self, v: &ScalarField) -> f64 {
        let f = self.integrands(v, true);
        let na = self.table.n_actions;
        let lambda = self.problem.lambda;
        self.core
            .iter()
            .map(|&i| {
                let big_f = log_sum_exp(&f[i * na..(i + 1) * na], &self.disc.quad.weights, lambda);
                (self.problem.rho * v.values[i] - big_f).abs()
            })
            .fold(0.0, f64::max)
    }

    fn barrier_sup(&self) -> f64 {
        (0..self.disc.grid.len())
            .map(|i| self.problem.barrier(&self.disc.grid.coord(i)))
            .fold(0.0, f64::max)
    }

    pub fn run(&self, v0: &ScalarField, stop: &StopRule, opts: &TraceOptions<'_>) -> Result<PiaOutcome, PiaError> {
        let grid = &self.disc.grid;
        let core_bounds = grid.core_bounds();
        let ball = opts
            .ball
            .clone()
            .unwrap_or_else(|| Ball::unit(&core_bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>()));
        let barrier = self.barrier_sup();
        let mut trace = IterationTrace::default();
        let mut v_prev = v0.clone();
        let mut last: Option<PiaState> = None;
        let mut converged = false;
        for n in 1..=stop.max_iters.max(1) {
            let t0 = Instant::now();
            let state = self.step(&v_prev, n)?;
            let sup_norm = state.v.sup_norm();
            if !(sup_norm <= 1e3 * barrier) {
                return Err(PiaError::Diverged {
                    iteration: n,
                    sup_norm,
                    barrier,
                });
            }
            let (mut increment, mut min_increment) = (0.0f64, f64::INFINITY);
            for &i in &self.core {
                let dv = state.v.values[i] - v_prev.values[i];
                increment = increment.max(dv.abs());
                min_increment = min_increment.min(dv);
            }
            let (weighted_error, sup_error, grad_error) = match opts.reference {
                Some(r) => {
                    let e = state.v.sub(r)?;
                    (
                        Some(weighted_h1_error(&state.v, r, self.problem.rho, &ball)?),
                        Some(e.core_sup_norm()),
                        Some(derivative_sup(&e, 1, &core_bounds)?),
                    )
                }
                None => (None, None, None),
            };
            let (holder1, holder2) = if opts.seminorms {
                (
                    Some(holder_seminorm(&state.v, 1, opts.alpha, &core_bounds)?),
                    Some(holder_seminorm(&state.v, 2, opts.alpha, &core_bounds)?),
                )
            } else {
                (None, None)
            };
            trace.push(IterationRecord {
                n,
                sup_norm,
                increment,
                min_increment,
                weighted_error,
                sup_error,
                grad_error,
                holder1,
                holder2,
                solver_residual: state.solve.relative_residual,
                solver_iterations: state.solve.iterations,
                wall_time: t0.elapsed().as_secs_f64(),
            });
            log::debug!("iteration {n}: increment {increment:.3e}, min increment {min_increment:.3e}");
            v_prev = state.v.clone();
            last = Some(state);
            if increment < stop.delta_tol {
                converged = true;
                break;
            }
        }
        Ok(PiaOutcome {
            trace,
            converged,
            state: last.expect("at least one iteration"),
        })
    }
}

/// Runs policy iteration from `v0`.
pub fn pia_run(
    problem: &ControlProblem,
    disc: &Discretization,
    v0: &ScalarField,
    stop: &StopRule,
    opts: &TraceOptions<'_>,
) -> Result<PiaOutcome, PiaError> {
    PiaSolver::new(problem, disc)?.run(v0, stop, opts)
}

#[derive(Debug, Clone)]
pub struct Reference {
    /// Fine-grid solution injected onto the experiment grid.
    pub v: ScalarField,
    pub fine: ScalarField,
    pub iterations: usize,
    pub converged: bool,
    pub hjb_residual: f64,
}

/// Fine-grid policy iteration restricted to the experiment grid by injection.
pub fn reference_solution(
    problem: &ControlProblem,
    disc: &Discretization,
    disc_fine: &Discretization,
    max_iters: usize,
) -> Result<Reference, PiaError> {
    match disc.grid.nesting_factor(&disc_fine.grid) {
        Some(f) if f >= 2 => {}
        _ => return Err(PiaError::NotNested),
    }
    let solver = PiaSolver::new(problem, disc_fine)?;
    let stop = StopRule {
        max_iters,
        delta_tol: 100.0 * SOLVER_TOL,
    };
    let opts = TraceOptions {
        seminorms: false,
        ..Default::default()
    };
    let out = solver.run(&ScalarField::zeros(&disc_fine.grid), &stop, &opts)?;
    if !out.converged {
        log::warn!("reference solution did not reach its increment tolerance in {max_iters} iterations");
    }
    let hjb_residual = solver.hjb_residual(&out.state.v);
    Ok(Reference {
        v: out.state.v.restrict_to(&disc.grid)?,
        iterations: out.trace.len(),
        converged: out.converged,
        fine: out.state.v,
        hjb_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_problem, Growth, Regime};
    use std::collections::BTreeMap;

    fn constant_reward(c: f64) -> ControlProblem {
        ControlProblem::from_expressions(
            1,
            1,
            &format!("{c}"),
            &["cos(x1) + u1".into()],
            &[vec!["sqrt(1 + u1)".into()]],
            1.0,
            2.0,
            Growth {
                n: 0.0,
                a1: c.abs(),
                a2: 2.0,
                a3: 2.0,
            },
            1.0,
            Regime::Bounded,
            None,
        )
        .unwrap()
    }

    #[test]
    fn constant_reward_converges_to_discounted_constant() {
        let p = constant_reward(1.5);
        let disc = Discretization::new(&p, &[(-2.0, 2.0)], &[41], 0.5, 4, BoundaryKind::LinearExtrapolation).unwrap();
        let out = pia_run(
            &p,
            &disc,
            &ScalarField::zeros(&disc.grid),
            &StopRule::default(),
            &TraceOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!(out.state.v.values.iter().all(|v| (v - 0.75).abs() < 1e-10));
    }

    #[test]
    fn bounded_trig_monotone_and_convergent() {
        let m: BTreeMap<String, f64> = [("rho".to_string(), 20.0)].into_iter().collect();
        let p = builtin_problem("bounded-trig", &m).unwrap();
        let pi = std::f64::consts::PI;
        let disc = Discretization::new(&p, &[(-pi, pi)], &[65], 0.5, 8, BoundaryKind::Periodic).unwrap();
        let stop = StopRule {
            max_iters: 40,
            delta_tol: 0.0,
        };
        let out = pia_run(
            &p,
            &disc,
            &ScalarField::zeros(&disc.grid),
            &stop,
            &TraceOptions::default(),
        )
        .unwrap();
        assert!(out.trace.worst_monotonicity() >= -10.0 * SOLVER_TOL);
        let recs = out.trace.records();
        assert!(recs[39].increment < 1e-12);
        // Contraction of successive increments, while they are above round-off.
        for w in recs.windows(2).skip(1).filter(|w| w[1].increment > 1e-13) {
            assert!(
                w[1].increment <= 0.9 * w[0].increment,
                "{} then {}",
                w[0].increment,
                w[1].increment
            );
        }
        let solver = PiaSolver::new(&p, &disc).unwrap();
        assert!(solver.hjb_residual(&out.state.v) < 1e-9);
    }

    #[test]
    fn action_independent_problem_settles_after_one_step() {
        let p = ControlProblem::from_expressions(
            1,
            1,
            "sin(x1)",
            &["cos(x1)".into()],
            &[vec!["1".into()]],
            1.0,
            3.0,
            Growth {
                n: 0.0,
                a1: 1.0,
                a2: 1.0,
                a3: 1.0,
            },
            1.0,
            Regime::Bounded,
            None,
        )
        .unwrap();
        let disc = Discretization::new(&p, &[(-3.0, 3.0)], &[31], 0.5, 3, BoundaryKind::LinearExtrapolation).unwrap();
        let out = pia_run(
            &p,
            &disc,
            &ScalarField::zeros(&disc.grid),
            &StopRule::default(),
            &TraceOptions::default(),
        )
        .unwrap();
        assert_eq!(out.trace.len(), 2);
        assert!(out.trace.records()[1].increment < 1e-13);
    }

    #[test]
    fn reference_requires_nesting() {
        let p = constant_reward(1.0);
        let disc = Discretization::new(&p, &[(-2.0, 2.0)], &[21], 0.5, 4, BoundaryKind::LinearExtrapolation).unwrap();
        assert!(matches!(
            reference_solution(&p, &disc, &disc, 10),
            Err(PiaError::NotNested)
        ));
        let fine = disc.refined(2);
        let r = reference_solution(&p, &disc, &fine, 20).unwrap();
        assert!(r.converged);
        assert!(r.v.values.iter().all(|v| (v - 0.5).abs() < 1e-10));
    }
}
