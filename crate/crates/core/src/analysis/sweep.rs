//! Discount and perturbation-size sweeps.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{derivative_sup, fit_geometric_rate, holder_seminorm, weighted_h1_error, AnalysisError, Ball, RateFit};
use crate::discretize::ScalarField;
use crate::pia::{pia_run, reference_solution, DiscretizationSpec, PiaError, StopRule, TraceOptions};
use crate::problem::{validate_problem, Assumption, CheckStatus, ProblemSpec, ValidationOptions};

/// Column names of the six scaled quantities.
pub const SCALED_QUANTITIES: [&str; 6] = [
    "rho_sup",
    "sqrt_rho_grad_sup",
    "hess_sup",
    "rho_holder0",
    "rho_holder1",
    "rho_holder2",
];

#[derive(Debug, Clone, Serialize)]
pub struct RhoRow {
    pub rho: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `‖v‖_{∞,core}`
    pub sup_norm: f64,
    /// `ρ‖v‖_∞, √ρ‖Dv‖_∞, ‖D²v‖_∞, ρ^{1−α/2}[v]_{0,α}, ρ^{1/2−α/2}[v]_{1,α}, ρ^{−α/2}[v]_{2,α}` over the core.
    pub quantities: [f64; 6],
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RhoSweep {
    pub alpha: f64,
    pub rows: Vec<RhoRow>,
}

impl RhoSweep {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    /// `max/min` of each scaled quantity over the converged rows.
    pub fn variation(&self) -> [f64; 6] {
        let mut out = [f64::NAN; 6];
        for (k, o) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = self
                .rows
                .iter()
                .filter(|r| r.converged)
                .map(|r| r.quantities[k].abs())
                .collect();
            if vals.is_empty() {
                continue;
            }
            let (lo, hi) = vals
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            *o = if hi == 0.0 { 1.0 } else { hi / lo };
        }
        out
    }

    /// `‖v‖_∞(ρ_k) / ‖v‖_∞(ρ_{k+1})` for consecutive rows.
    pub fn sup_ratios(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[0].sup_norm / w[1].sup_norm).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["rho", "converged", "iterations", "sup_norm"];
        header.extend(SCALED_QUANTITIES);
        header.push("error");
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                format!("{}", r.rho),
                r.converged.to_string(),
                r.iterations.to_string(),
                format!("{:e}", r.sup_norm),
            ];
            rec.extend(r.quantities.iter().map(|q| format!("{q:e}")));
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Six scaled norms of `v` over the core.
pub fn scaled_quantities(v: &ScalarField, rho: f64, alpha: f64) -> Result<[f64; 6], AnalysisError> {
    let core = v.grid.core_bounds();
    Ok([
        rho * v.core_sup_norm(),
        rho.sqrt() * derivative_sup(v, 1, &core)?,
        derivative_sup(v, 2, &core)?,
        rho.powf(1.0 - alpha / 2.0) * holder_seminorm(v, 0, alpha, &core)?,
        rho.powf(0.5 - alpha / 2.0) * holder_seminorm(v, 1, alpha, &core)?,
        rho.powf(-alpha / 2.0) * holder_seminorm(v, 2, alpha, &core)?,
    ])
}

fn run_error(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Runs policy iteration to convergence for each discount and tabulates the scaled norms.
pub fn rho_scaling_sweep(
    template: &ProblemSpec,
    rhos: &[f64],
    disc: &DiscretizationSpec,
    stop: &StopRule,
    alpha: f64,
) -> Result<RhoSweep, AnalysisError> {
    if rhos.is_empty() {
        return Err(AnalysisError::Invalid("empty discount list".into()));
    }
    if rhos.iter().any(|&r| !(r >= 1.0)) || rhos.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::Invalid(format!(
            "discounts {rhos:?} must be ascending and at least 1"
        )));
    }
    let rows = rhos
        .par_iter()
        .map(|&rho| {
            let failed = |error: String| RhoRow {
                rho,
                converged: false,
                iterations: 0,
                sup_norm: f64::NAN,
                quantities: [f64::NAN; 6],
                error: Some(error),
            };
            let problem = match template.with_override("rho", rho).build() {
                Ok(p) => p,
                Err(e) => return failed(run_error(e)),
            };
            let d = match disc.build(&problem) {
                Ok(d) => d,
                Err(e) => return failed(run_error(e)),
            };
            let opts = TraceOptions {
                alpha,
                seminorms: false,
                ..Default::default()
            };
            let out = match pia_run(&problem, &d, &ScalarField::zeros(&d.grid), stop, &opts) {
                Ok(o) => o,
                Err(e) => return failed(run_error(e)),
            };
            match scaled_quantities(&out.state.v, rho, alpha) {
                Ok(quantities) => RhoRow {
                    rho,
                    converged: out.converged,
                    iterations: out.trace.len(),
                    sup_norm: out.state.v.core_sup_norm(),
                    quantities,
                    error: (!out.converged).then(|| "did not converge".to_string()),
                },
                Err(e) => failed(run_error(e)),
            }
        })
        .collect();
    Ok(RhoSweep { alpha, rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct FloorRow {
    pub eps0: f64,
    pub rho: f64,
    /// `e_0, e_1, …`: weighted H¹ errors of `v^0 = 0, v^1, …` against the fine-grid reference.
    pub errors: Vec<f64>,
    pub fit: Option<RateFit>,
    pub converged: bool,
    pub reference_residual: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FloorSweep {
    pub rows: Vec<FloorRow>,
}

impl FloorSweep {
    pub fn floors(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.fit.as_ref().map_or(f64::NAN, |f| f.floor))
            .collect()
    }

    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged && r.fit.is_some())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "eps0",
            "rho",
            "q",
            "floor",
            "fit_residual",
            "iterations",
            "converged",
            "reference_residual",
            "error",
        ])?;
        for r in &self.rows {
            let (q, f, res) = r
                .fit
                .as_ref()
                .map_or((String::new(), String::new(), String::new()), |f| {
                    (
                        format!("{:e}", f.q),
                        format!("{:e}", f.floor),
                        format!("{:e}", f.residual),
                    )
                });
            w.write_record([
                format!("{}", r.eps0),
                format!("{}", r.rho),
                q,
                f,
                res,
                r.errors.len().saturating_sub(1).to_string(),
                r.converged.to_string(),
                format!("{:e}", r.reference_residual),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FloorSweepOptions {
    /// Refinement factor of the reference grid.
    pub fine_factor: usize,
    /// Iterations recorded per row; the increment tolerance only decides `converged`.
    pub stop: StopRule,
    /// Refuse to run when the largest perturbation violates the smallness conditions.
    pub strict: bool,
    pub validation: ValidationOptions,
}

impl Default for FloorSweepOptions {
    fn default() -> Self {
        FloorSweepOptions {
            fine_factor: 2,
            stop: StopRule {
                max_iters: 20,
                delta_tol: 1e-9,
            },
            strict: false,
            validation: ValidationOptions::default(),
        }
    }
}

fn floor_row(
    template: &ProblemSpec,
    eps0: f64,
    rho: f64,
    disc: &DiscretizationSpec,
    opts: &FloorSweepOptions,
) -> Result<FloorRow, String> {
    let problem = template
        .with_override("eps0", eps0)
        .with_override("rho", rho)
        .build()
        .map_err(run_error)?;
    let d = disc.build(&problem).map_err(run_error)?;
    let reference = reference_solution(
        &problem,
        &d,
        &d.refined(opts.fine_factor),
        4 * opts.stop.max_iters.max(10),
    )
    .map_err(run_error)?;
    let center: Vec<f64> = d.grid.core_bounds().iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let ball = Ball::unit(&center);
    let v0 = ScalarField::zeros(&d.grid);
    let mut errors = vec![weighted_h1_error(&v0, &reference.v, rho, &ball).map_err(run_error)?];
    let trace_opts = TraceOptions {
        reference: Some(&reference.v),
        ball: Some(ball),
        seminorms: false,
        ..Default::default()
    };
    let all_iters = StopRule {
        max_iters: opts.stop.max_iters,
        delta_tol: 0.0,
    };
    let out = pia_run(&problem, &d, &v0, &all_iters, &trace_opts).map_err(run_error)?;
    errors.extend(out.trace.records().iter().map(|r| r.weighted_error.unwrap_or(f64::NAN)));
    let converged = out
        .trace
        .records()
        .last()
        .is_some_and(|r| r.increment < opts.stop.delta_tol);
    let (fit, error) = match fit_geometric_rate(&errors, None) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(FloorRow {
        eps0,
        rho,
        errors,
        fit,
        converged,
        reference_residual: reference.hjb_residual,
        error,
    })
}

/// Per perturbation size: fine-grid reference, a fixed-length policy iteration,
/// and a geometric-plus-floor fit of the weighted H¹ errors.
pub fn epsilon_floor_sweep(
    template: &ProblemSpec,
    eps0_list: &[f64],
    rho: f64,
    disc: &DiscretizationSpec,
    opts: &FloorSweepOptions,
) -> Result<FloorSweep, AnalysisError> {
    if eps0_list.is_empty() {
        return Err(AnalysisError::Invalid("empty perturbation list".into()));
    }
    let largest = eps0_list.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let problem = template
        .with_override("eps0", largest)
        .with_override("rho", rho)
        .build()?;
    let report = validate_problem(&problem, &opts.validation)?;
    if report.status(Assumption::LargeDiscount) == CheckStatus::Violated {
        if opts.strict {
            return Err(AnalysisError::Invalid(format!(
                "smallness condition violated at eps0 = {largest}: {}",
                report
                    .checks
                    .iter()
                    .find(|c| c.assumption == Assumption::LargeDiscount)
                    .map_or(String::new(), |c| c.detail.clone())
            )));
        }
        log::warn!("smallness condition violated at eps0 = {largest}; continuing");
    }
    let rows = eps0_list
        .par_iter()
        .map(|&eps0| {
            floor_row(template, eps0, rho, disc, opts).unwrap_or_else(|error| FloorRow {
                eps0,
                rho,
                errors: Vec::new(),
                fit: None,
                converged: false,
                reference_residual: f64::NAN,
                error: Some(error),
            })
        })
        .collect();
    Ok(FloorSweep { rows })
}

impl From<PiaError> for AnalysisError {
    fn from(e: PiaError) -> Self {
        AnalysisError::Pia(Box::new(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::BoundaryKind;

    fn constant_spec(c: f64) -> ProblemSpec {
        let text = format!(
            r#"
            state_dim = 1
            action_dim = 1
            rho = 1
            ellipticity = 1
            [expressions]
            r = "{c}"
            b = ["0"]
            sigma = [["1"]]
            [growth]
            N = 0
            A1 = {a}
            A2 = 0
            A3 = 1
            "#,
            a = c.abs()
        );
        toml::from_str(&text).unwrap()
    }

    #[test]
    fn constant_reward_scaled_sup_is_exact() {
        let disc = DiscretizationSpec {
            bounds: vec![(-2.0, 2.0)],
            n: vec![21],
            core_fraction: 0.5,
            action_nodes: 3,
            boundary: BoundaryKind::LinearExtrapolation,
        };
        let sweep = rho_scaling_sweep(&constant_spec(1.7), &[2.0, 4.0, 8.0], &disc, &StopRule::default(), 0.5).unwrap();
        assert!(sweep.all_converged());
        for r in &sweep.rows {
            assert!((r.quantities[0] - 1.7).abs() < 1e-10, "{r:?}");
        }
        for ratio in sweep.sup_ratios() {
            assert!((ratio - 2.0).abs() < 1e-9);
        }
        assert!(rho_scaling_sweep(&constant_spec(1.0), &[4.0, 2.0], &disc, &StopRule::default(), 0.5).is_err());
    }
}
