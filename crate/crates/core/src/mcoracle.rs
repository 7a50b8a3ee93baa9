//! Monte-Carlo values of a fixed policy: Euler–Maruyama paths of the
//! policy-averaged SDE with discounted running reward `r̄ − λH̄`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::discretize::{interpolate_with, Grid};
use crate::linsolve::BoundaryCondition;
use crate::policy::{averaged_coefficients, AveragedCoefficients, PolicyError, PolicyField};
use crate::problem::{ControlProblem, MAX_DIM};

/// Smallest accepted path count.
pub const MIN_PATHS: usize = 1000;
/// Estimates with a larger exit fraction are flagged invalid.
pub const MAX_EXIT_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum McError {
    #[error("{0}")]
    Invalid(String),
    #[error("start point {x0:?} is outside the core region")]
    OutsideCore { x0: Vec<f64> },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McOptions {
    pub npaths: usize,
    /// Defaults to `20/ρ`.
    pub horizon: Option<f64>,
    /// Defaults to `horizon/10⁴`.
    pub dt: Option<f64>,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            npaths: 10_000,
            horizon: None,
            dt: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub x0: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    /// Paths that contributed (Cholesky failures excluded).
    pub npaths: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub seed: u64,
    pub exit_fraction: f64,
    pub cholesky_failures: usize,
    /// `e^{−ρT}·sup|r̄ − λH̄|/ρ`, the neglected tail.
    pub tail_bound: f64,
    /// Exit fraction within [`MAX_EXIT_FRACTION`] and no Cholesky failures.
    pub valid: bool,
}

/// Interpolated averaged coefficients along a path.
struct PathCoefficients<'a> {
    grid: &'a Grid,
    coeffs: &'a AveragedCoefficients,
    source: Vec<f64>,
    periodic: bool,
}

#[derive(Debug, Clone, Copy)]
struct PathOutcome {
    payoff: f64,
    exited: bool,
    failed: bool,
}

/// Lower-triangular `L` with `LLᵀ = s`; `None` unless positive definite.
fn cholesky(s: &[[f64; MAX_DIM]; MAX_DIM], d: usize) -> Option<[[f64; MAX_DIM]; MAX_DIM]> {
    let mut l = [[0.0; MAX_DIM]; MAX_DIM];
    if !(s[0][0] > 0.0) {
        return None;
    }
    l[0][0] = s[0][0].sqrt();
    if d == 2 {
        l[1][0] = 0.5 * (s[1][0] + s[0][1]) / l[0][0];
        let rest = s[1][1] - l[1][0] * l[1][0];
        if !(rest > 0.0) {
            return None;
        }
        l[1][1] = rest.sqrt();
    }
    Some(l)
}

impl PathCoefficients<'_> {
    fn at(&self, x: &[f64]) -> (f64, [f64; MAX_DIM], [[f64; MAX_DIM]; MAX_DIM]) {
        let d = self.grid.dim();
        let g = self.grid;
        let r = interpolate_with(g, x, |i| self.source[i]);
        let mut b = [0.0; MAX_DIM];
        let mut s = [[0.0; MAX_DIM]; MAX_DIM];
        for k in 0..d {
            b[k] = interpolate_with(g, x, |i| self.coeffs.b_bar.values[i][k]);
            for l in 0..d {
                s[k][l] = interpolate_with(g, x, |i| self.coeffs.sigma_bar.values[i][k][l]);
            }
        }
        (r, b, s)
    }

    /// Wraps periodic coordinates; reports whether `x` left a non-periodic box.
    fn confine(&self, x: &mut [f64]) -> bool {
        let (lo, hi) = (self.grid.lo(), self.grid.hi());
        let mut out = false;
        for k in 0..x.len() {
            if self.periodic {
                let len = hi[k] - lo[k];
                x[k] = lo[k] + (x[k] - lo[k]).rem_euclid(len);
            } else if x[k] < lo[k] || x[k] > hi[k] {
                out = true;
            }
        }
        out
    }

    fn simulate(&self, x0: &[f64], rho: f64, dt: f64, steps: usize, rng: &mut ChaCha8Rng) -> PathOutcome {
        let d = x0.len();
        let mut x = [0.0; MAX_DIM];
        x[..d].copy_from_slice(x0);
        // Exact discount weight of a left-endpoint step: ∫_t^{t+dt} e^{−ρs} ds = e^{−ρt}(1 − e^{−ρdt})/ρ.
        let step_weight = -(-rho * dt).exp_m1() / rho;
        let decay = (-rho * dt).exp();
        let mut discount = 1.0;
        let mut payoff = 0.0;
        let sqrt_dt = dt.sqrt();
        for _ in 0..steps {
            let (r, b, s) = self.at(&x[..d]);
            payoff += discount * step_weight * r;
            let Some(l) = cholesky(&s, d) else {
                return PathOutcome {
                    payoff,
                    exited: false,
                    failed: true,
                };
            };
            let mut z = [0.0; MAX_DIM];
            for zk in z.iter_mut().take(d) {
                *zk = StandardNormal.sample(rng);
            }
            for k in 0..d {
                let noise: f64 = (0..=k).map(|j| l[k][j] * z[j]).sum();
                x[k] += b[k] * dt + noise * sqrt_dt;
            }
            discount *= decay;
            if self.confine(&mut x[..d]) {
                return PathOutcome {
                    payoff,
                    exited: true,
                    failed: false,
                };
            }
        }
        PathOutcome {
            payoff,
            exited: false,
            failed: false,
        }
    }
}

/// Discounted payoff of one path from `x0`; path `stream` of the seeded generator.
#[allow(clippy::too_many_arguments)]
pub fn simulate_exploratory_sde(
    coeffs: &AveragedCoefficients,
    lambda: f64,
    rho: f64,
    bc: &BoundaryCondition,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    seed: u64,
    stream: u64,
) -> Result<f64, McError> {
    let pc = path_coefficients(coeffs, lambda, bc);
    check_inputs(&coeffs.r_bar.grid, x0, rho, dt, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let out = pc.simulate(x0, rho, dt, (horizon / dt).round() as usize, &mut rng);
    if out.failed {
        return Err(McError::Invalid(
            "averaged diffusion not positive definite along the path".into(),
        ));
    }
    Ok(out.payoff)
}

fn path_coefficients<'a>(
    coeffs: &'a AveragedCoefficients,
    lambda: f64,
    bc: &BoundaryCondition,
) -> PathCoefficients<'a> {
    PathCoefficients {
        grid: &coeffs.r_bar.grid,
        coeffs,
        source: coeffs.source(lambda),
        periodic: matches!(bc, BoundaryCondition::Periodic),
    }
}

fn check_inputs(grid: &Grid, x0: &[f64], rho: f64, dt: f64, horizon: f64) -> Result<(), McError> {
    if x0.len() != grid.dim() {
        return Err(McError::Invalid(format!(
            "start point has {} coordinates, grid has {}",
            x0.len(),
            grid.dim()
        )));
    }
    let core = grid.core_bounds();
    if x0.iter().zip(&core).any(|(x, (a, b))| x < a || x > b) {
        return Err(McError::OutsideCore { x0: x0.to_vec() });
    }
    if !(dt > 0.0) || !(horizon >= 10.0 / rho) || dt > horizon {
        return Err(McError::Invalid(format!(
            "need 0 < dt ≤ T and T ≥ 10/ρ; got dt = {dt}, T = {horizon}, ρ = {rho}"
        )));
    }
    Ok(())
}

/// Monte-Carlo value of the policy whose averaged coefficients are given.
pub fn mc_value_averaged(
    coeffs: &AveragedCoefficients,
    lambda: f64,
    rho: f64,
    bc: &BoundaryCondition,
    x0: &[f64],
    opts: &McOptions,
) -> Result<McEstimate, McError> {
    if opts.npaths < MIN_PATHS {
        return Err(McError::Invalid(format!(
            "{} paths requested; at least {MIN_PATHS} are required",
            opts.npaths
        )));
    }
    let horizon = opts.horizon.unwrap_or(20.0 / rho);
    let dt = opts.dt.unwrap_or(horizon / 1e4);
    check_inputs(&coeffs.r_bar.grid, x0, rho, dt, horizon)?;
    let pc = path_coefficients(coeffs, lambda, bc);
    let steps = (horizon / dt).round() as usize;
    let outcomes: Vec<PathOutcome> = (0..opts.npaths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(p);
            pc.simulate(x0, rho, dt, steps, &mut rng)
        })
        .collect();
    let ok: Vec<f64> = outcomes.iter().filter(|o| !o.failed).map(|o| o.payoff).collect();
    let failures = outcomes.len() - ok.len();
    let exits = outcomes.iter().filter(|o| o.exited).count();
    let m = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / m;
    let var = if ok.len() > 1 {
        ok.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (m - 1.0)
    } else {
        f64::NAN
    };
    let reward_scale = pc.source.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let exit_fraction = exits as f64 / opts.npaths as f64;
    Ok(McEstimate {
        x0: x0.to_vec(),
        mean,
        stderr: (var / m).sqrt(),
        npaths: ok.len(),
        dt,
        horizon,
        seed: opts.seed,
        exit_fraction,
        cholesky_failures: failures,
        tail_bound: (-rho * horizon).exp() * reward_scale / rho,
        valid: exit_fraction <= MAX_EXIT_FRACTION && failures == 0,
    })
}

/// Monte-Carlo value of `policy` for `problem` from `x0`.
pub fn mc_value(
    problem: &ControlProblem,
    policy: &PolicyField,
    bc: &BoundaryCondition,
    x0: &[f64],
    opts: &McOptions,
) -> Result<McEstimate, McError> {
    let coeffs = averaged_coefficients(problem, policy)?;
    mc_value_averaged(&coeffs, problem.lambda, problem.rho, bc, x0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{MatrixField, ScalarField, VectorField};

    fn constant_fields(grid: &Grid, r: f64, b: f64, s: f64) -> AveragedCoefficients {
        let n = grid.len();
        AveragedCoefficients::from_fields(
            ScalarField::from_fn(grid, |_| r),
            VectorField {
                grid: grid.clone(),
                values: vec![[b, 0.0]; n],
            },
            MatrixField {
                grid: grid.clone(),
                values: vec![[[s, 0.0], [0.0, s]]; n],
            },
            ScalarField::zeros(grid),
        )
    }

    #[test]
    fn constant_reward_is_deterministic() {
        let g = Grid::new(&[(-50.0, 50.0)], &[11], 0.5).unwrap();
        let c = constant_fields(&g, 2.0, 0.0, 1.0);
        let rho = 1.5;
        let opts = McOptions {
            npaths: 1000,
            horizon: Some(10.0),
            dt: Some(0.01),
            seed: 3,
        };
        let est = mc_value_averaged(&c, 1.0, rho, &BoundaryCondition::LinearExtrapolation, &[0.0], &opts).unwrap();
        let exact = 2.0 * (1.0 - (-rho * 10.0f64).exp()) / rho;
        assert!((est.mean - exact).abs() < 1e-12, "{} vs {exact}", est.mean);
        assert!(est.stderr < 1e-12);
        assert!(est.valid);
    }

    #[test]
    fn tiny_box_exits() {
        let g = Grid::new(&[(-0.1, 0.1)], &[11], 0.5).unwrap();
        let c = constant_fields(&g, 1.0, 0.0, 25.0);
        let opts = McOptions {
            npaths: 1000,
            horizon: Some(10.0),
            dt: Some(0.01),
            seed: 1,
        };
        let est = mc_value_averaged(&c, 1.0, 1.0, &BoundaryCondition::LinearExtrapolation, &[0.0], &opts).unwrap();
        assert!(est.exit_fraction > 0.99);
        assert!(!est.valid);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = Grid::new(&[(-1.0, 1.0)], &[11], 0.5).unwrap();
        let c = constant_fields(&g, 1.0, 0.0, 1.0);
        let bc = BoundaryCondition::LinearExtrapolation;
        let few = McOptions {
            npaths: 10,
            ..Default::default()
        };
        assert!(matches!(
            mc_value_averaged(&c, 1.0, 1.0, &bc, &[0.0], &few),
            Err(McError::Invalid(_))
        ));
        let opts = McOptions::default();
        assert!(matches!(
            mc_value_averaged(&c, 1.0, 1.0, &bc, &[0.9], &opts),
            Err(McError::OutsideCore { .. })
        ));
        let degenerate = constant_fields(&g, 1.0, 0.0, 0.0);
        let est = mc_value_averaged(
            &degenerate,
            1.0,
            1.0,
            &bc,
            &[0.0],
            &McOptions {
                npaths: 1000,
                horizon: Some(10.0),
                dt: Some(0.1),
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(est.cholesky_failures, 1000);
        assert!(!est.valid);
    }

    #[test]
    fn same_seed_same_estimate() {
        let g = Grid::new(&[(-4.0, 4.0)], &[41], 0.5).unwrap();
        let c = AveragedCoefficients::from_fields(
            ScalarField::from_fn(&g, |x| x[0] * x[0]),
            VectorField {
                grid: g.clone(),
                values: (0..g.len()).map(|i| [-g.coord(i)[0], 0.0]).collect(),
            },
            MatrixField {
                grid: g.clone(),
                values: vec![[[1.0, 0.0], [0.0, 0.0]]; g.len()],
            },
            ScalarField::zeros(&g),
        );
        let opts = McOptions {
            npaths: 1000,
            horizon: Some(10.0),
            dt: Some(0.01),
            seed: 42,
        };
        let bc = BoundaryCondition::LinearExtrapolation;
        let a = mc_value_averaged(&c, 1.0, 2.0, &bc, &[0.0], &opts).unwrap();
        let b = mc_value_averaged(&c, 1.0, 2.0, &bc, &[0.0], &opts).unwrap();
        assert_eq!(a, b);
    }
}
