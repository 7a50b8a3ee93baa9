//! Named problem families with analytically known growth and ellipticity constants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{ControlProblem, Growth, ProblemError, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `r = Σ sin(x_k)·u`, `b_k = cos(x_k) + u/2`, `σ = √2·I`.
    BoundedTrig,
    /// Bounded-trig reward and drift with `Σ = 2I + ε₀(2u₁−1)Π cos(x_k)·I`.
    SmallDiffusion,
    /// `r = A1(1+|x|^N)(1−κ(1−u₁))`, `b_k = A2·u·x_k`, `σ = A3·√(1+|x|²)·I`.
    LinearGrowth,
    /// `r = −q|x|² − c(u₁−½)²`, `b_k = −a·x_k + β(u−½)`, `σ = s·I`.
    LqLike,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::BoundedTrig,
        Family::SmallDiffusion,
        Family::LinearGrowth,
        Family::LqLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::BoundedTrig => "bounded-trig",
            Family::SmallDiffusion => "small-diffusion",
            Family::LinearGrowth => "linear-growth",
            Family::LqLike => "lq-like",
        }
    }

    fn allowed_params(self) -> &'static [&'static str] {
        match self {
            Family::BoundedTrig => &["d", "L", "lambda", "rho"],
            Family::SmallDiffusion => &["d", "L", "lambda", "rho", "eps0"],
            Family::LinearGrowth => &["d", "L", "lambda", "rho", "N", "A1", "A2", "A3", "kappa"],
            Family::LqLike => &["d", "L", "lambda", "rho", "q", "c", "a", "beta", "s"],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Family, ProblemError> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| ProblemError::UnknownFamily(s.to_string()))
    }
}

struct Params<'a> {
    map: &'a BTreeMap<String, f64>,
}

impl Params<'_> {
    fn get(&self, name: &str, default: f64) -> f64 {
        self.map.get(name).copied().unwrap_or(default)
    }

    fn positive(&self, name: &str, default: f64) -> Result<f64, ProblemError> {
        let v = self.get(name, default);
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(invalid(name, v, "must be positive and finite"))
        }
    }

    fn dim(&self, name: &str) -> Result<usize, ProblemError> {
        let v = self.get(name, 1.0);
        if v == 1.0 || v == 2.0 {
            Ok(v as usize)
        } else {
            Err(invalid(name, v, "dimension must be 1 or 2"))
        }
    }
}

fn invalid(name: &str, value: f64, reason: &str) -> ProblemError {
    ProblemError::InvalidParam {
        name: name.to_string(),
        value,
        reason: reason.to_string(),
    }
}

/// Formats a literal so that it parses back to the same `f64`.
fn lit(v: f64) -> String {
    if v < 0.0 {
        format!("({v:?})")
    } else {
        format!("{v:?}")
    }
}

fn action_var(k: usize, l: usize) -> String {
    format!("u{}", k % l + 1)
}

fn norm_sq(d: usize) -> String {
    (1..=d).map(|k| format!("x{k}^2")).collect::<Vec<_>>().join(" + ")
}

fn diagonal(d: usize, entry: &str) -> Vec<Vec<String>> {
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| if i == j { entry.to_string() } else { "0".to_string() })
                .collect()
        })
        .collect()
}

/// Instantiates a named family.
///
/// Common parameters: `d`, `L` (dimensions, default 1), `lambda` (default 1), `rho`.
/// Growth and ellipticity constants are computed from the parameters.
pub fn builtin_problem(family: &str, params: &BTreeMap<String, f64>) -> Result<ControlProblem, ProblemError> {
    let fam: Family = family.parse()?;
    if let Some(unknown) = params.keys().find(|k| !fam.allowed_params().contains(&k.as_str())) {
        return Err(ProblemError::UnknownParam {
            family: family.to_string(),
            name: unknown.clone(),
        });
    }
    let p = Params { map: params };
    let d = p.dim("d")?;
    let l = p.dim("L")?;
    let lambda = p.positive("lambda", 1.0)?;

    let mut problem = match fam {
        Family::BoundedTrig | Family::SmallDiffusion => {
            let rho = p.positive("rho", 10.0)?;
            let reward = (0..d)
                .map(|k| format!("sin(x{})*{}", k + 1, action_var(k, l)))
                .collect::<Vec<_>>()
                .join(" + ");
            let drift: Vec<String> = (0..d)
                .map(|k| format!("cos(x{}) + {}/2", k + 1, action_var(k, l)))
                .collect();
            let growth = Growth {
                n: 0.0,
                a1: d as f64 / 2.0,
                a2: 1.5,
                a3: 0.0,
            };
            if fam == Family::BoundedTrig {
                ControlProblem::from_expressions(
                    d,
                    l,
                    &reward,
                    &drift,
                    &diagonal(d, "sqrt(2)"),
                    lambda,
                    rho,
                    Growth {
                        a3: 2f64.sqrt(),
                        ..growth
                    },
                    0.5,
                    Regime::Bounded,
                    Some(&diagonal(d, "sqrt(2)")),
                )?
            } else {
                let eps0 = p.get("eps0", 0.05);
                if !(0.0..1.0).contains(&eps0) {
                    return Err(invalid("eps0", eps0, "perturbation size must lie in [0, 1)"));
                }
                let entry = if eps0 == 0.0 {
                    "sqrt(2)".to_string()
                } else {
                    let shape = (1..=d).map(|k| format!("cos(x{k})")).collect::<Vec<_>>().join("*");
                    format!("sqrt(2 + {}*(2*u1 - 1)*{shape})", lit(eps0))
                };
                ControlProblem::from_expressions(
                    d,
                    l,
                    &reward,
                    &drift,
                    &diagonal(d, &entry),
                    lambda,
                    rho,
                    Growth {
                        a3: (2.0 + eps0).sqrt(),
                        ..growth
                    },
                    1.0 / (2.0 - eps0),
                    Regime::Bounded,
                    Some(&diagonal(d, "sqrt(2)")),
                )?
            }
        }
        Family::LinearGrowth => {
            let n = p.positive("N", 2.0)?;
            let a1 = p.positive("A1", 1.0)?;
            let a2 = p.positive("A2", 1.0)?;
            let a3 = p.positive("A3", 1.0)?;
            let kappa = p.get("kappa", 0.5);
            if !(0.0..=1.0).contains(&kappa) {
                return Err(invalid("kappa", kappa, "must lie in [0, 1]"));
            }
            let growth = Growth { n, a1, a2, a3 };
            let rho = p.positive("rho", 2.0 * growth.discount_threshold())?;
            let reward = format!(
                "{}*(1 + ({})^{})*(1 - {}*(1 - u1))",
                lit(a1),
                norm_sq(d),
                lit(n / 2.0),
                lit(kappa)
            );
            let drift: Vec<String> = (0..d)
                .map(|k| format!("{}*{}*x{}", lit(a2), action_var(k, l), k + 1))
                .collect();
            let vol_entry = format!("{}*sqrt(1 + {})", lit(a3), norm_sq(d));
            ControlProblem::from_expressions(
                d,
                l,
                &reward,
                &drift,
                &diagonal(d, &vol_entry),
                lambda,
                rho,
                growth,
                (1.0 / (a3 * a3)).max(1.0),
                Regime::Unbounded,
                None,
            )?
        }
        Family::LqLike => {
            let q = p.positive("q", 1.0)?;
            let c = p.positive("c", 1.0)?;
            let a = p.positive("a", 1.0)?;
            let beta = p.positive("beta", 1.0)?;
            let s = p.positive("s", 1.0)?;
            let growth = Growth {
                n: 2.0,
                a1: q.max(c / 4.0),
                a2: a.max(beta / 2.0),
                a3: s,
            };
            let rho = p.positive("rho", 2.0 * growth.discount_threshold())?;
            let reward = format!("-{}*({}) - {}*(u1 - 0.5)^2", lit(q), norm_sq(d), lit(c));
            let drift: Vec<String> = (0..d)
                .map(|k| format!("-{}*x{} + {}*({} - 0.5)", lit(a), k + 1, lit(beta), action_var(k, l)))
                .collect();
            ControlProblem::from_expressions(
                d,
                l,
                &reward,
                &drift,
                &diagonal(d, &lit(s)),
                lambda,
                rho,
                growth,
                (1.0 / (s * s)).max(1.0),
                Regime::Unbounded,
                None,
            )?
        }
    };
    problem.label = fam.name().to_string();
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn bounded_trig_matches_definition() {
        let p = builtin_problem(
            "bounded-trig",
            &params(&[("d", 1.0), ("L", 1.0), ("lambda", 1.0), ("rho", 10.0)]),
        )
        .unwrap();
        assert_eq!(p.ellipticity, 0.5);
        assert!(!p.vol_action_dependent);
        for &(x, u) in &[(0.3, 0.7), (-2.0, 0.1), (1.0, 1.0)] {
            let c = p.eval(&[x], &[u]).unwrap();
            assert!((c.r - f64::sin(x) * u).abs() < 1e-15);
            assert!((c.b[0] - (f64::cos(x) + u / 2.0)).abs() < 1e-15);
            assert!((c.sigma_sq[0][0] - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn small_diffusion_zero_perturbation_is_action_independent() {
        let p = builtin_problem("small-diffusion", &params(&[("eps0", 0.0)])).unwrap();
        assert!(!p.vol_action_dependent);
        let p = builtin_problem("small-diffusion", &params(&[("eps0", 0.1)])).unwrap();
        assert!(p.vol_action_dependent);
        let hi = p.eval(&[0.0], &[1.0]).unwrap().sigma_sq[0][0];
        let lo = p.eval(&[0.0], &[0.0]).unwrap().sigma_sq[0][0];
        assert!((hi - 2.1).abs() < 1e-12 && (lo - 1.9).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(
            builtin_problem("small-diffusion", &params(&[("eps0", -0.1)])),
            Err(ProblemError::InvalidParam { .. })
        ));
        assert!(matches!(
            builtin_problem("nope", &params(&[])),
            Err(ProblemError::UnknownFamily(_))
        ));
        assert!(matches!(
            builtin_problem("bounded-trig", &params(&[("eps0", 0.1)])),
            Err(ProblemError::UnknownParam { .. })
        ));
        assert!(builtin_problem("bounded-trig", &params(&[("d", 3.0)])).is_err());
    }

    #[test]
    fn linear_growth_threshold_arithmetic() {
        let p = builtin_problem(
            "linear-growth",
            &params(&[("N", 2.0), ("A1", 1.0), ("A2", 1.0), ("A3", 1.0), ("rho", 24.0)]),
        )
        .unwrap();
        assert_eq!(p.growth.discount_threshold(), 36.0);
        assert!(p.rho < p.growth.discount_threshold());
        let c = p.eval(&[2.0], &[1.0]).unwrap();
        assert!((c.r - 5.0).abs() < 1e-12);
        assert!((c.b[0] - 2.0).abs() < 1e-15);
        assert!((c.sigma_sq[0][0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn lq_like_two_dimensional() {
        let p = builtin_problem("lq-like", &params(&[("d", 2.0), ("L", 2.0)])).unwrap();
        let c = p.eval(&[1.0, -1.0], &[0.5, 1.0]).unwrap();
        assert!((c.r + 2.0).abs() < 1e-15);
        assert!((c.b[0] + 1.0).abs() < 1e-15);
        assert!((c.b[1] - 1.5).abs() < 1e-15);
        assert_eq!(p.growth.n, 2.0);
    }
}
