//! Control problems: coefficients `(r, b, σ)`, entropy weight, discount rate and
//! the growth/ellipticity constants that gate the convergence theory.
//!
//! Problems are either built from one of the named families
//! ([`builtin_problem`]) or from coefficient expressions ([`ProblemSpec`]).

mod expr;
mod families;
mod validate;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expr::{state_action_vars, EvalError, Expr, ParseError};
pub use families::{builtin_problem, Family};
pub use validate::{
    validate_problem, Assumption, AssumptionCheck, CheckStatus, SmallnessReport, ValidationOptions, ValidationReport,
    Witness,
};

/// Largest supported state and action dimension.
pub const MAX_DIM: usize = 2;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem family `{0}`")]
    UnknownFamily(String),
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParam { name: String, value: f64, reason: String },
    #[error("unknown parameter `{name}` for family `{family}`")]
    UnknownParam { family: String, name: String },
    #[error("invalid problem definition: {0}")]
    Invalid(String),
    #[error("coefficient `{which}`: {source}")]
    Parse {
        which: String,
        #[source]
        source: ParseError,
    },
    #[error("coefficient evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("reading problem file {path}: {message}")]
    File { path: String, message: String },
}

/// Polynomial growth bounds `|r| ≤ A1(1+|x|^N)`, `|b| ≤ A2(1+|x|)`, `|σ| ≤ A3(1+|x|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    #[serde(rename = "N")]
    pub n: f64,
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "A2")]
    pub a2: f64,
    #[serde(rename = "A3")]
    pub a3: f64,
}

impl Growth {
    /// Discount threshold `4(N+1)(A2 + N·A3)` for comparison with unbounded coefficients.
    pub fn discount_threshold(&self) -> f64 {
        4.0 * (self.n + 1.0) * (self.a2 + self.n * self.a3)
    }

    /// Growth barrier `2·A1·ρ⁻¹·(1+|x|²)^{N/2}` at radius `|x|`.
    pub fn barrier(&self, rho: f64, norm_x: f64) -> f64 {
        2.0 * self.a1 / rho * (1.0 + norm_x * norm_x).powf(self.n / 2.0)
    }
}

/// Which part of the theory a problem belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Bounded Hölder coefficients, diffusion may depend on the action.
    Bounded,
    /// Linear-growth drift and volatility, polynomial reward.
    Unbounded,
}

/// Coefficient values at one `(x, u)` point. Only the leading `d` entries are used.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointCoefficients {
    pub r: f64,
    pub b: [f64; MAX_DIM],
    /// `Σ = σσᵀ`
    pub sigma_sq: [[f64; MAX_DIM]; MAX_DIM],
    /// max-abs entry of σ
    pub sigma_max: f64,
}

#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub state_dim: usize,
    pub action_dim: usize,
    pub reward: Expr,
    pub drift: Vec<Expr>,
    /// `d × m` volatility matrix.
    pub vol: Vec<Vec<Expr>>,
    pub vol_action_dependent: bool,
    pub lambda: f64,
    pub rho: f64,
    pub growth: Growth,
    /// `C0` with `σσᵀ ≥ I/C0`.
    pub ellipticity: f64,
    pub regime: Regime,
    /// Baseline volatility `σ₀(x)` with `Σ₀ = σ₀σ₀ᵀ`, used by the smallness report.
    pub sigma0: Option<Vec<Vec<Expr>>>,
    pub label: String,
}

impl ControlProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn from_expressions(
        state_dim: usize,
        action_dim: usize,
        reward: &str,
        drift: &[String],
        vol: &[Vec<String>],
        lambda: f64,
        rho: f64,
        growth: Growth,
        ellipticity: f64,
        regime: Regime,
        sigma0: Option<&[Vec<String>]>,
    ) -> Result<ControlProblem, ProblemError> {
        if !(1..=MAX_DIM).contains(&state_dim) {
            return Err(ProblemError::Invalid(format!(
                "state dimension {state_dim} unsupported (1 or 2)"
            )));
        }
        if !(1..=MAX_DIM).contains(&action_dim) {
            return Err(ProblemError::Invalid(format!(
                "action dimension {action_dim} unsupported (1 or 2)"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ProblemError::InvalidParam {
                name: "lambda".into(),
                value: lambda,
                reason: "entropy weight must be positive".into(),
            });
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(ProblemError::InvalidParam {
                name: "rho".into(),
                value: rho,
                reason: "discount rate must be positive".into(),
            });
        }
        if drift.len() != state_dim {
            return Err(ProblemError::Invalid(format!(
                "drift has {} components, expected {state_dim}",
                drift.len()
            )));
        }
        let check_matrix = |m: &[Vec<String>], what: &str, square: bool| {
            if m.len() != state_dim || m.iter().any(|row| row.is_empty()) {
                return Err(ProblemError::Invalid(format!(
                    "{what} must have {state_dim} non-empty rows"
                )));
            }
            let cols = m[0].len();
            if m.iter().any(|row| row.len() != cols) || (square && cols != state_dim) {
                return Err(ProblemError::Invalid(format!("{what} rows have inconsistent lengths")));
            }
            Ok(())
        };
        check_matrix(vol, "sigma", false)?;
        if let Some(s0) = sigma0 {
            check_matrix(s0, "sigma0", false)?;
        }
        let vars = state_action_vars(state_dim, action_dim);
        let parse = |which: String, text: &str| {
            Expr::parse(text, &vars).map_err(|source| ProblemError::Parse { which, source })
        };
        let reward = parse("r".into(), reward)?;
        let drift = drift
            .iter()
            .enumerate()
            .map(|(i, t)| parse(format!("b[{i}]"), t))
            .collect::<Result<Vec<_>, _>>()?;
        let parse_matrix = |name: &str, m: &[Vec<String>]| {
            m.iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(j, t)| parse(format!("{name}[{i}][{j}]"), t))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let vol = parse_matrix("sigma", vol)?;
        let sigma0 = sigma0.map(|m| parse_matrix("sigma0", m)).transpose()?;
        if let Some(s0) = &sigma0 {
            if s0
                .iter()
                .flatten()
                .any(|e| (state_dim..state_dim + action_dim).any(|k| e.depends_on(k)))
            {
                return Err(ProblemError::Invalid("sigma0 must not depend on the action".into()));
            }
        }
        let vol_action_dependent = vol
            .iter()
            .flatten()
            .any(|e| (state_dim..state_dim + action_dim).any(|k| e.depends_on(k)));
        Ok(ControlProblem {
            state_dim,
            action_dim,
            reward,
            drift,
            vol,
            vol_action_dependent,
            lambda,
            rho,
            growth,
            ellipticity,
            regime,
            sigma0,
            label: "expressions".into(),
        })
    }

    pub fn vars(&self) -> Vec<String> {
        state_action_vars(self.state_dim, self.action_dim)
    }

    /// Evaluates `r`, `b`, `σσᵀ` at `(x, u)`.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<PointCoefficients, EvalError> {
        let d = self.state_dim;
        let mut point = [0.0; 2 * MAX_DIM];
        point[..d].copy_from_slice(&x[..d]);
        point[d..d + self.action_dim].copy_from_slice(&u[..self.action_dim]);
        let point = &point[..d + self.action_dim];
        let mut out = PointCoefficients {
            r: self.reward.eval(point)?,
            ..Default::default()
        };
        for (k, e) in self.drift.iter().enumerate() {
            out.b[k] = e.eval(point)?;
        }
        let (sq, max) = outer_square(&self.vol, point, d)?;
        out.sigma_sq = sq;
        out.sigma_max = max;
        Ok(out)
    }

    /// `Σ₀(x) = σ₀σ₀ᵀ`, when a baseline is configured.
    pub fn sigma0_sq(&self, x: &[f64]) -> Option<Result<[[f64; MAX_DIM]; MAX_DIM], EvalError>> {
        let s0 = self.sigma0.as_ref()?;
        let d = self.state_dim;
        let mut point = [0.0; 2 * MAX_DIM];
        point[..d].copy_from_slice(&x[..d]);
        Some(outer_square(s0, &point[..d + self.action_dim], d).map(|(sq, _)| sq))
    }

    /// Barrier `2A1ρ⁻¹(1+|x|²)^{N/2}` for this problem.
    pub fn barrier(&self, x: &[f64]) -> f64 {
        let norm = x[..self.state_dim].iter().map(|v| v * v).sum::<f64>().sqrt();
        self.growth.barrier(self.rho, norm)
    }
}

fn outer_square(m: &[Vec<Expr>], point: &[f64], d: usize) -> Result<([[f64; MAX_DIM]; MAX_DIM], f64), EvalError> {
    let cols = m[0].len();
    let mut vals = vec![0.0; d * cols];
    let mut max = 0.0f64;
    for i in 0..d {
        for j in 0..cols {
            let v = m[i][j].eval(point)?;
            max = max.max(v.abs());
            vals[i * cols + j] = v;
        }
    }
    let mut sq = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..d {
        for k in 0..d {
            sq[i][k] = (0..cols).map(|j| vals[i * cols + j] * vals[k * cols + j]).sum();
        }
    }
    Ok((sq, max))
}

/// Coefficient expressions of a problem definition file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionSet {
    pub r: String,
    pub b: Vec<String>,
    pub sigma: Vec<Vec<String>>,
}

/// Problem definition as read from JSON or TOML.
///
/// Either `family` (+ `params`) or `expressions` must be given. Top-level
/// `lambda`/`rho` override family defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expressions: Option<ExpressionSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<Growth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipticity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<Vec<Vec<String>>>,
}

impl ProblemSpec {
    pub fn family(name: &str, params: &[(&str, f64)]) -> ProblemSpec {
        ProblemSpec {
            family: Some(name.to_string()),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            expressions: None,
            state_dim: None,
            action_dim: None,
            lambda: None,
            rho: None,
            growth: None,
            ellipticity: None,
            regime: None,
            sigma0: None,
        }
    }

    /// Loads a `.json` or `.toml` problem file.
    pub fn from_path(path: &Path) -> Result<ProblemSpec, ProblemError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProblemError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| ProblemError::File {
            path: path.display().to_string(),
            message,
        })
    }

    /// Returns a copy with one parameter replaced (used by sweeps).
    pub fn with_override(&self, key: &str, value: f64) -> ProblemSpec {
        let mut out = self.clone();
        match key {
            "rho" => out.rho = Some(value),
            "lambda" => out.lambda = Some(value),
            _ => {
                out.params.insert(key.to_string(), value);
            }
        }
        out
    }

    pub fn build(&self) -> Result<ControlProblem, ProblemError> {
        match (&self.family, &self.expressions) {
            (Some(_), Some(_)) => Err(ProblemError::Invalid(
                "give either `family` or `expressions`, not both".into(),
            )),
            (None, None) => Err(ProblemError::Invalid("problem needs `family` or `expressions`".into())),
            (Some(family), None) => {
                let mut params = self.params.clone();
                if let Some(l) = self.lambda {
                    params.insert("lambda".into(), l);
                }
                if let Some(r) = self.rho {
                    params.insert("rho".into(), r);
                }
                builtin_problem(family, &params)
            }
            (None, Some(ex)) => {
                let d = self.state_dim.unwrap_or(ex.b.len());
                let l = self.action_dim.unwrap_or(1);
                let lambda = self.lambda.unwrap_or(1.0);
                let rho = self
                    .rho
                    .ok_or_else(|| ProblemError::Invalid("expression problems need `rho`".into()))?;
                let growth = self
                    .growth
                    .ok_or_else(|| ProblemError::Invalid("expression problems need a `growth` record".into()))?;
                let ellipticity = self
                    .ellipticity
                    .ok_or_else(|| ProblemError::Invalid("expression problems need `ellipticity`".into()))?;
                let regime = self.regime.unwrap_or(if growth.n > 0.0 {
                    Regime::Unbounded
                } else {
                    Regime::Bounded
                });
                ControlProblem::from_expressions(
                    d,
                    l,
                    &ex.r,
                    &ex.b,
                    &ex.sigma,
                    lambda,
                    rho,
                    growth,
                    ellipticity,
                    regime,
                    self.sigma0.as_deref(),
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expression_problem_round_trip() {
        let text = r#"
            lambda = 1.0
            rho = 10.0
            ellipticity = 1.0
            growth = { N = 0.0, A1 = 1.0, A2 = 1.0, A3 = 1.0 }
            [expressions]
            r = "sin(x1)*u1"
            b = ["cos(x1)"]
            sigma = [["1"]]
        "#;
        let spec: ProblemSpec = toml::from_str(text).unwrap();
        let p = spec.build().unwrap();
        assert_eq!(p.state_dim, 1);
        assert_eq!(p.regime, Regime::Bounded);
        assert!(!p.vol_action_dependent);
        let c = p.eval(&[0.0], &[0.5]).unwrap();
        assert_eq!(c.r, 0.0);
        assert_eq!(c.b[0], 1.0);
        assert_eq!(c.sigma_sq[0][0], 1.0);
        let json = serde_json::to_string(&spec).unwrap();
        let back: ProblemSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn rejects_bad_definitions() {
        let mut spec = ProblemSpec::family("bounded-trig", &[]);
        spec.expressions = Some(ExpressionSet {
            r: "1".into(),
            b: vec!["0".into()],
            sigma: vec![vec!["1".into()]],
        });
        assert!(spec.build().is_err());
        let growth = Growth {
            n: 0.0,
            a1: 1.0,
            a2: 1.0,
            a3: 1.0,
        };
        let err = ControlProblem::from_expressions(
            1,
            1,
            "x1 +",
            &["0".into()],
            &[vec!["1".into()]],
            1.0,
            1.0,
            growth,
            1.0,
            Regime::Bounded,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ProblemError::Parse { .. }));
        let err = ControlProblem::from_expressions(
            1,
            1,
            "1",
            &["0".into()],
            &[vec!["1".into()]],
            -1.0,
            1.0,
            growth,
            1.0,
            Regime::Bounded,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ProblemError::InvalidParam { .. }));
    }

    #[test]
    fn two_dimensional_outer_square() {
        let growth = Growth {
            n: 0.0,
            a1: 1.0,
            a2: 1.0,
            a3: 2.0,
        };
        let p = ControlProblem::from_expressions(
            2,
            1,
            "0",
            &["0".into(), "0".into()],
            &[vec!["1".into(), "0".into()], vec!["1".into(), "1".into()]],
            1.0,
            1.0,
            growth,
            1.0,
            Regime::Bounded,
            None,
        )
        .unwrap();
        let c = p.eval(&[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(c.sigma_sq, [[1.0, 1.0], [1.0, 2.0]]);
    }
}
