//! Sampling checks of the standing assumptions on a [`ControlProblem`].
//!
//! Samples are Halton points placed on a fixed ladder of centred cubes with
//! half-widths `2^{k/4}`, `k ≥ −8`. Only rungs not exceeding the requested
//! half-width are used, so a larger box always samples a superset of points.

use rayon::prelude::*;
use serde::Serialize;

use super::{ControlProblem, EvalError, ProblemError, Regime, MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Assumption {
    /// Ellipticity and bounded Hölder coefficients.
    #[serde(rename = "bounded-coefficients")]
    BoundedCoefficients,
    /// Diffusion close to an action-independent baseline.
    #[serde(rename = "diffusion-smallness")]
    DiffusionSmallness,
    /// Discount large relative to the regularity constant and the smallness of the perturbation.
    #[serde(rename = "large-discount")]
    LargeDiscount,
    /// Polynomial growth of `r`, linear growth of `b` and `σ`.
    #[serde(rename = "growth")]
    Growth,
    /// Discount threshold `ρ ≥ 4(N+1)(A2+N·A3)`.
    #[serde(rename = "discount-threshold")]
    DiscountThreshold,
}

impl Assumption {
    pub fn name(self) -> &'static str {
        match self {
            Assumption::BoundedCoefficients => "bounded-coefficients",
            Assumption::DiffusionSmallness => "diffusion-smallness",
            Assumption::LargeDiscount => "large-discount",
            Assumption::Growth => "growth",
            Assumption::DiscountThreshold => "discount-threshold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Satisfied,
    Violated,
    NotApplicable,
}

/// Sample at which an assumption failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub assumption: Assumption,
    pub status: CheckStatus,
    pub detail: String,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallnessReport {
    /// Source of the baseline volatility `σ₀` (with `Σ₀ = σ₀σ₀ᵀ`).
    pub sigma0: String,
    pub eps0: f64,
    /// Sampled lower bound of the Hölder seminorm of `M = Σ − Σ₀`.
    pub eps1: f64,
    pub eps1_pairs: usize,
    /// `[ρ ≥ A^{2/(1−α)}, ε₀·A·ρ^{α/2} ≤ 1, ε₁·A ≤ 1]`
    pub large_discount_satisfied: [bool; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub smallness: Option<SmallnessReport>,
    /// `max(1, C0, sampled Hölder norms of r, b, Σ)`.
    pub effective_c0: f64,
    pub samples: usize,
    pub box_half_width: f64,
}

impl ValidationReport {
    pub fn status(&self, a: Assumption) -> CheckStatus {
        self.checks
            .iter()
            .find(|c| c.assumption == a)
            .map_or(CheckStatus::NotApplicable, |c| c.status)
    }

    pub fn violations(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Violated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationOptions {
    pub alpha: f64,
    /// Quasi-random samples per ladder rung.
    pub sample_budget: usize,
    pub half_width: f64,
    /// Regularity constant entering the discount and smallness inequalities.
    pub regularity_a1: f64,
    /// Relative slack applied to every sampled inequality.
    pub tol: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            alpha: 0.5,
            sample_budget: 2000,
            half_width: 4.0,
            regularity_a1: 1.0,
            tol: 1e-9,
        }
    }
}

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    out
}

/// Ladder rungs `2^{k/4}` (k ≥ −8) not exceeding `half_width`.
fn ladder(half_width: f64) -> Vec<f64> {
    (-8..)
        .map(|k| 2f64.powf(k as f64 / 4.0))
        .take_while(|s| *s <= half_width * (1.0 + 1e-12))
        .collect()
}

struct Sample {
    x: [f64; MAX_DIM],
    u: [f64; MAX_DIM],
    /// Partner point `y` with `0 < |x − y| ≤ 1`.
    y: [f64; MAX_DIM],
}

fn samples(d: usize, l: usize, half_width: f64, budget: usize) -> Vec<Sample> {
    let mut out = Vec::new();
    let corners_u: Vec<[f64; MAX_DIM]> = (0..(1usize << l))
        .map(|m| {
            let mut u = [0.0; MAX_DIM];
            for (k, uk) in u.iter_mut().enumerate().take(l) {
                *uk = ((m >> k) & 1) as f64;
            }
            u
        })
        .chain(std::iter::once([0.5; MAX_DIM]))
        .collect();
    let unit_offset = |x: [f64; MAX_DIM]| {
        let mut y = x;
        y[0] += 0.5;
        y
    };
    for s in ladder(half_width) {
        let mut fixed_x = vec![[0.0; MAX_DIM]];
        for m in 0..(1usize << d) {
            let mut x = [0.0; MAX_DIM];
            for (k, xk) in x.iter_mut().enumerate().take(d) {
                *xk = if (m >> k) & 1 == 1 { s } else { -s };
            }
            fixed_x.push(x);
        }
        for x in &fixed_x {
            for u in &corners_u {
                out.push(Sample {
                    x: *x,
                    u: *u,
                    y: unit_offset(*x),
                });
            }
        }
        for i in 1..=budget as u64 {
            let mut x = [0.0; MAX_DIM];
            let mut u = [0.0; MAX_DIM];
            let mut y = [0.0; MAX_DIM];
            for k in 0..d {
                x[k] = s * (2.0 * radical_inverse(i, PRIMES[k]) - 1.0);
            }
            for k in 0..l {
                u[k] = radical_inverse(i, PRIMES[d + k]);
            }
            let mut delta = [0.0; MAX_DIM];
            for k in 0..d {
                delta[k] = (2.0 * radical_inverse(i, PRIMES[d + l + k]) - 1.0) / (d as f64).sqrt();
            }
            if delta[..d].iter().all(|v| v.abs() < 1e-9) {
                delta[0] = 0.5;
            }
            for k in 0..d {
                y[k] = x[k] + delta[k];
            }
            out.push(Sample { x, u, y });
        }
    }
    out
}

/// Values gathered at one sample.
#[derive(Default, Clone, Copy)]
struct Probe {
    min_eig: f64,
    r_abs: f64,
    b_max: f64,
    sigma_sq_max: f64,
    growth_ratio: [f64; 3],
    holder: [f64; 3],
    m_abs: f64,
    m_holder: f64,
}

fn min_eig(s: &[[f64; MAX_DIM]; MAX_DIM], d: usize) -> f64 {
    if d == 1 {
        return s[0][0];
    }
    let (a, b, c) = (s[0][0], 0.5 * (s[0][1] + s[1][0]), s[1][1]);
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    mean - rad
}

fn max_abs(m: &[[f64; MAX_DIM]; MAX_DIM], d: usize) -> f64 {
    let mut out = 0.0f64;
    for row in m.iter().take(d) {
        for v in row.iter().take(d) {
            out = out.max(v.abs());
        }
    }
    out
}

fn diff_max(a: &[[f64; MAX_DIM]; MAX_DIM], b: &[[f64; MAX_DIM]; MAX_DIM], d: usize) -> f64 {
    let mut out = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            out = out.max((a[i][j] - b[i][j]).abs());
        }
    }
    out
}

fn sub(a: &[[f64; MAX_DIM]; MAX_DIM], b: &[[f64; MAX_DIM]; MAX_DIM]) -> [[f64; MAX_DIM]; MAX_DIM] {
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            out[i][j] = a[i][j] - b[i][j];
        }
    }
    out
}

fn probe(p: &ControlProblem, s: &Sample, alpha: f64, baseline: &Baseline) -> Result<Probe, EvalError> {
    let d = p.state_dim;
    let cx = p.eval(&s.x, &s.u)?;
    let cy = p.eval(&s.y, &s.u)?;
    let dist = (0..d).map(|k| (s.x[k] - s.y[k]).powi(2)).sum::<f64>().sqrt();
    let scale = dist.powf(alpha);
    let norm_x = s.x[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
    let b_max = cx.b[..d].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let b_diff = (0..d).fold(0.0f64, |m, k| m.max((cx.b[k] - cy.b[k]).abs()));
    let g = &p.growth;
    let mut out = Probe {
        min_eig: min_eig(&cx.sigma_sq, d),
        r_abs: cx.r.abs(),
        b_max,
        sigma_sq_max: max_abs(&cx.sigma_sq, d),
        growth_ratio: [
            cx.r.abs() / (g.a1 * (1.0 + norm_x.powf(g.n))),
            b_max / (g.a2 * (1.0 + norm_x)),
            cx.sigma_max / (g.a3 * (1.0 + norm_x)),
        ],
        holder: [
            (cx.r - cy.r).abs() / scale,
            b_diff / scale,
            diff_max(&cx.sigma_sq, &cy.sigma_sq, d) / scale,
        ],
        ..Default::default()
    };
    let base = |x: &[f64; MAX_DIM]| -> Result<[[f64; MAX_DIM]; MAX_DIM], EvalError> {
        match baseline {
            Baseline::Configured => p.sigma0_sq(x).expect("baseline configured"),
            Baseline::CentreAction => Ok(p.eval(x, &[0.5; MAX_DIM])?.sigma_sq),
            Baseline::None => Ok([[0.0; MAX_DIM]; MAX_DIM]),
        }
    };
    if !matches!(baseline, Baseline::None) {
        let mx = sub(&cx.sigma_sq, &base(&s.x)?);
        let my = sub(&cy.sigma_sq, &base(&s.y)?);
        out.m_abs = max_abs(&mx, d);
        out.m_holder = diff_max(&mx, &my, d) / scale;
    }
    Ok(out)
}

enum Baseline {
    Configured,
    /// Action-independent σ: the baseline is σ itself.
    CentreAction,
    None,
}

/// Checks every standing assumption by sampling.
pub fn validate_problem(problem: &ControlProblem, opts: &ValidationOptions) -> Result<ValidationReport, ProblemError> {
    if opts.sample_budget < 1000 {
        return Err(ProblemError::Invalid(format!(
            "sample budget {} below the minimum of 1000",
            opts.sample_budget
        )));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(ProblemError::Invalid(format!(
            "Hölder exponent {} outside (0, 1)",
            opts.alpha
        )));
    }
    if !(opts.half_width >= 0.25) {
        return Err(ProblemError::Invalid(format!(
            "sampling half-width {} below the smallest rung 0.25",
            opts.half_width
        )));
    }
    let d = problem.state_dim;
    let l = problem.action_dim;
    let baseline = if problem.sigma0.is_some() {
        Baseline::Configured
    } else if !problem.vol_action_dependent {
        Baseline::CentreAction
    } else {
        Baseline::None
    };
    let pts = samples(d, l, opts.half_width, opts.sample_budget);
    let probes: Vec<Probe> = pts
        .par_iter()
        .map(|s| {
            probe(problem, s, opts.alpha, &baseline).map_err(|e| {
                log::error!("coefficient evaluation failed at x={:?} u={:?}", &s.x[..d], &s.u[..l]);
                ProblemError::Eval(e)
            })
        })
        .collect::<Result<_, _>>()?;

    let witness = |i: usize, value: f64, bound: f64| Witness {
        x: pts[i].x[..d].to_vec(),
        u: pts[i].u[..l].to_vec(),
        value,
        bound,
    };
    // Index of the first maximiser, in sample order.
    let argmax = |f: &dyn Fn(&Probe) -> f64| {
        probes
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, p)| {
                let v = f(p);
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
    };
    let tol = opts.tol;
    let mut checks = Vec::new();

    // Ellipticity and bounded norms.
    let floor = 1.0 / problem.ellipticity;
    let (i_eig, neg_min) = argmax(&|p: &Probe| -p.min_eig);
    let min_eig = -neg_min;
    let sup = |f: &dyn Fn(&Probe) -> f64| argmax(f).1;
    let norms = [
        sup(&|p| p.r_abs) + sup(&|p| p.holder[0]),
        sup(&|p| p.b_max) + sup(&|p| p.holder[1]),
        sup(&|p| p.sigma_sq_max) + sup(&|p| p.holder[2]),
    ];
    let effective_c0 = norms.iter().fold(problem.ellipticity.max(1.0), |m, v| m.max(*v));
    checks.push(if min_eig >= floor * (1.0 - tol) - tol {
        AssumptionCheck {
            assumption: Assumption::BoundedCoefficients,
            status: CheckStatus::Satisfied,
            detail: format!(
                "min eigenvalue {min_eig:.6} ≥ 1/C0 = {floor:.6}; sampled coefficient norms r {:.4}, b {:.4}, Σ {:.4}",
                norms[0], norms[1], norms[2]
            ),
            witness: None,
        }
    } else {
        AssumptionCheck {
            assumption: Assumption::BoundedCoefficients,
            status: CheckStatus::Violated,
            detail: format!("min eigenvalue {min_eig:.6} < 1/C0 = {floor:.6}"),
            witness: Some(witness(i_eig, min_eig, floor)),
        }
    });

    // Smallness of the action-dependent part of the diffusion.
    let bounded = problem.regime == Regime::Bounded;
    let smallness = if matches!(baseline, Baseline::None) {
        None
    } else {
        let eps0 = sup(&|p| p.m_abs);
        let eps1 = sup(&|p| p.m_holder);
        let a = opts.regularity_a1;
        let rho = problem.rho;
        let sigma0 = match &problem.sigma0 {
            Some(m) => m
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|e| e.source().to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                })
                .collect::<Vec<_>>()
                .join("; "),
            None => "σ (action-independent)".to_string(),
        };
        Some(SmallnessReport {
            sigma0,
            eps0,
            eps1,
            eps1_pairs: probes.len(),
            large_discount_satisfied: [
                rho >= a.powf(2.0 / (1.0 - opts.alpha)),
                eps0 * a * rho.powf(opts.alpha / 2.0) <= 1.0,
                eps1 * a <= 1.0,
            ],
        })
    };
    match (&smallness, bounded) {
        (Some(s), true) => {
            let ok = s.eps0 < 1.0 && s.eps1 < 1.0;
            checks.push(AssumptionCheck {
                assumption: Assumption::DiffusionSmallness,
                status: if ok {
                    CheckStatus::Satisfied
                } else {
                    CheckStatus::Violated
                },
                detail: format!(
                    "eps0 = {:.6e}, eps1 ≥ {:.6e} over {} pairs",
                    s.eps0, s.eps1, s.eps1_pairs
                ),
                witness: (!ok).then(|| {
                    let (i, v) = argmax(&|p: &Probe| p.m_abs.max(p.m_holder));
                    witness(i, v, 1.0)
                }),
            });
            let ok3 = s.large_discount_satisfied.iter().all(|b| *b);
            checks.push(AssumptionCheck {
                assumption: Assumption::LargeDiscount,
                status: if ok3 {
                    CheckStatus::Satisfied
                } else {
                    CheckStatus::Violated
                },
                detail: format!(
                    "regularity constant {}: discount {}, eps0 term {}, eps1 term {}",
                    opts.regularity_a1,
                    s.large_discount_satisfied[0],
                    s.large_discount_satisfied[1],
                    s.large_discount_satisfied[2]
                ),
                witness: None,
            });
        }
        _ => {
            let reason = if bounded {
                "no action-independent baseline Σ₀ configured"
            } else {
                "applies to bounded coefficients only"
            };
            for a in [Assumption::DiffusionSmallness, Assumption::LargeDiscount] {
                checks.push(AssumptionCheck {
                    assumption: a,
                    status: CheckStatus::NotApplicable,
                    detail: reason.to_string(),
                    witness: None,
                });
            }
        }
    }

    // Growth record.
    let (i_g, worst) = argmax(&|p: &Probe| p.growth_ratio.iter().fold(0.0f64, |m, v| m.max(*v)));
    let growth_ok = worst <= 1.0 + tol;
    checks.push(AssumptionCheck {
        assumption: Assumption::Growth,
        status: if growth_ok {
            CheckStatus::Satisfied
        } else {
            CheckStatus::Violated
        },
        detail: format!("largest coefficient/bound ratio {worst:.6}"),
        witness: (!growth_ok).then(|| witness(i_g, worst, 1.0)),
    });

    let threshold = problem.growth.discount_threshold();
    checks.push(if bounded {
        AssumptionCheck {
            assumption: Assumption::DiscountThreshold,
            status: CheckStatus::NotApplicable,
            detail: "applies to unbounded coefficients only".into(),
            witness: None,
        }
    } else {
        let ok = problem.rho >= threshold;
        AssumptionCheck {
            assumption: Assumption::DiscountThreshold,
            status: if ok {
                CheckStatus::Satisfied
            } else {
                CheckStatus::Violated
            },
            detail: format!("rho = {} vs threshold 4(N+1)(A2+N·A3) = {threshold}", problem.rho),
            witness: None,
        }
    });

    Ok(ValidationReport {
        checks,
        smallness,
        effective_c0,
        samples: probes.len(),
        box_half_width: opts.half_width,
    })
}
