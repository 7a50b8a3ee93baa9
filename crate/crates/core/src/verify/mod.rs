//! Exact checks of non-uniqueness examples for the one-dimensional linear
//! equation `ρv − b v′ − ½ s v″ = 0`, and of the polynomial growth barrier.

mod poly;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::discretize::ScalarField;
use crate::problem::ControlProblem;

pub use poly::{rat, ratio, Poly};

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("{which} has degree {degree}; at most 4 is supported")]
    Degree { which: &'static str, degree: usize },
    #[error("solution degree must be at least 1, got {0}")]
    SolutionDegree(usize),
    #[error("coefficient matching is singular at a_{k}: the equation for x^{k} does not determine it")]
    SingularPivot { k: usize },
    #[error("field and problem dimensions differ")]
    Shape,
}

/// `ρv − b v′ − ½ s v″` with polynomial `b`, `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ode1dOperator {
    pub rho: BigRational,
    pub b: Poly,
    pub s: Poly,
}

impl Ode1dOperator {
    pub fn new(rho: BigRational, b: Poly, s: Poly) -> Result<Ode1dOperator, VerifyError> {
        for (which, p) in [("drift", &b), ("diffusion", &s)] {
            if let Some(degree) = p.degree().filter(|&d| d > 4) {
                return Err(VerifyError::Degree { which, degree });
            }
        }
        Ok(Ode1dOperator { rho, b, s })
    }
}

/// Exact `ρv − b v′ − ½ s v″`.
pub fn polynomial_residual(op: &Ode1dOperator, v: &Poly) -> Poly {
    let d1 = v.derivative();
    let d2 = d1.derivative();
    let half = ratio(1, 2);
    let r = v.scale(&op.rho);
    let r = &r - &(&op.b * &d1);
    &r - &(&op.s * &d2).scale(&half)
}

/// Coefficient of `x^k` in the residual, as a linear form in `a_0..=a_n`.
fn residual_row(op: &Ode1dOperator, n: usize, k: usize) -> Vec<BigRational> {
    let mut row = vec![BigRational::zero(); n + 1];
    let half = ratio(1, 2);
    for (j, a) in row.iter_mut().enumerate() {
        // ρ a_j x^j
        if j == k {
            *a += &op.rho;
        }
        // −b_i · j a_j x^{i+j−1}
        if j >= 1 && k + 1 >= j {
            *a -= op.b.coeff(k + 1 - j) * rat(j as i64);
        }
        // −½ s_i · j(j−1) a_j x^{i+j−2}
        if j >= 2 && k + 2 >= j {
            *a -= op.s.coeff(k + 2 - j) * rat((j * (j - 1)) as i64) * &half;
        }
    }
    row
}

/// Degree-`n` polynomial with leading coefficient 1 annihilated by `op`.
///
/// Matches every residual coefficient exactly; `Ok(None)` when the matching
/// equations are inconsistent (in particular when the top-degree equation
/// fails). A consistent system that leaves some `a_k` free is reported as
/// [`VerifyError::SingularPivot`].
pub fn polynomial_solution_finder(op: &Ode1dOperator, n: usize) -> Result<Option<Poly>, VerifyError> {
    if n == 0 {
        return Err(VerifyError::SolutionDegree(n));
    }
    let extra = op.b.degree().unwrap_or(0).max(op.s.degree().unwrap_or(0));
    let top = n + extra;
    // Unknowns a_0..a_{n−1}; a_n = 1 moves to the right-hand side.
    let mut rows: Vec<(Vec<BigRational>, BigRational)> = (0..=top)
        .map(|k| {
            let full = residual_row(op, n, k);
            let rhs = -full[n].clone();
            (full[..n].to_vec(), rhs)
        })
        .collect();
    // Eliminate from the highest unknown down, mirroring the downward recursion.
    let mut pivot_of = vec![None; n];
    let mut used = vec![false; rows.len()];
    for col in (0..n).rev() {
        let Some(p) = (0..rows.len()).rev().find(|&r| !used[r] && !rows[r].0[col].is_zero()) else {
            continue;
        };
        used[p] = true;
        pivot_of[col] = Some(p);
        let (prow, prhs) = rows[p].clone();
        for r in 0..rows.len() {
            if r != p && !rows[r].0[col].is_zero() {
                let f = &rows[r].0[col] / &prow[col];
                for c in 0..n {
                    let t = &f * &prow[c];
                    rows[r].0[c] -= t;
                }
                let t = &f * &prhs;
                rows[r].1 -= t;
            }
        }
    }
    if rows.iter().enumerate().any(|(r, (_, rhs))| !used[r] && !rhs.is_zero()) {
        return Ok(None);
    }
    if let Some(k) = (0..n).rev().find(|&c| pivot_of[c].is_none()) {
        return Err(VerifyError::SingularPivot { k });
    }
    let mut coeffs: Vec<BigRational> = (0..n)
        .map(|c| {
            let p = pivot_of[c].expect("pivot found for every unknown");
            &rows[p].1 / &rows[p].0[c]
        })
        .collect();
    coeffs.push(BigRational::one());
    let v = Poly::new(coeffs);
    assert!(
        polynomial_residual(op, &v).is_zero(),
        "finder output must annihilate the operator"
    );
    Ok(Some(v))
}

/// Recursion as printed for the `ρ = N(N−1)` example:
/// `a_N = 1`, `a_{N−1} = N/(2(N−1))`, `a_k = ((k+1)a_{k+1} + (k+2)(k+1)a_{k+2}) / (N(N−1) − k(k−1))`.
pub fn printed_recursion(n: usize) -> Poly {
    assert!(n >= 2);
    let ni = n as i64;
    let mut a = vec![BigRational::zero(); n + 1];
    a[n] = rat(1);
    a[n - 1] = ratio(ni, 2 * (ni - 1));
    for k in (0..n - 1).rev() {
        let ki = k as i64;
        let num = rat(ki + 1) * &a[k + 1] + rat((ki + 2) * (ki + 1)) * &a[k + 2];
        a[k] = num / rat(ni * (ni - 1) - ki * (ki - 1));
    }
    Poly::new(a)
}

/// Recursion obtained by matching the `x^k` coefficient of `ρv − v′ − ½(1+x²)v″`:
/// `a_k(ρ − k(k−1)/2) = (k+1)a_{k+1} + ½(k+2)(k+1)a_{k+2}`, with `ρ = N(N−1)/2`.
pub fn derived_recursion(n: usize) -> Poly {
    assert!(n >= 2);
    let rho = ratio((n * (n - 1)) as i64, 2);
    let mut a = vec![BigRational::zero(); n + 2];
    a[n] = rat(1);
    for k in (0..n).rev() {
        let ki = k as i64;
        let num = rat(ki + 1) * &a[k + 1] + ratio((ki + 2) * (ki + 1), 2) * &a[k + 2];
        a[k] = num / (&rho - ratio(ki * (ki - 1), 2));
    }
    a.truncate(n + 1);
    Poly::new(a)
}

/// Second-order jet `(f, f′, f″)` for automatic differentiation.
#[derive(Debug, Clone, Copy)]
struct Jet2 {
    v: f64,
    d1: f64,
    d2: f64,
}

impl Jet2 {
    fn var(x: f64) -> Jet2 {
        Jet2 { v: x, d1: 1.0, d2: 0.0 }
    }

    fn exp(self) -> Jet2 {
        let e = self.v.exp();
        Jet2 {
            v: e,
            d1: e * self.d1,
            d2: e * (self.d2 + self.d1 * self.d1),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentialReport {
    /// Coefficient of `eˣ` in `c_0·v − c_2·v″` using `(eˣ)″ = eˣ`.
    pub symbolic_residual: String,
    pub symbolic_zero: bool,
    /// `max |v − v″| / |v|` over 10³ points of `[−5, 5]`, `v″` by jet differentiation.
    pub numeric_max_relative: f64,
    /// Same residual for `v − 2v″`; must be `−eˣ`.
    pub control_symbolic_residual: String,
    pub control_max_relative_deviation: f64,
    pub passed: bool,
}

pub fn exponential_counterexample_check() -> ExponentialReport {
    // In the basis {eˣ}, v″ = v, so c_0 v − c_2 v″ = (c_0 − c_2) eˣ.
    let coeff = |c0: i64, c2: i64| rat(c0) - rat(c2);
    let main = coeff(1, 1);
    let control = coeff(1, 2);
    let mut numeric: f64 = 0.0;
    let mut control_dev: f64 = 0.0;
    for i in 0..1000 {
        let x = -5.0 + 10.0 * i as f64 / 999.0;
        let j = Jet2::var(x).exp();
        numeric = numeric.max((j.v - j.d2).abs() / j.v);
        control_dev = control_dev.max(((j.v - 2.0 * j.d2) + j.v).abs() / j.v);
    }
    let fmt = |c: &BigRational| format!("{c}·e^x");
    ExponentialReport {
        symbolic_zero: main.is_zero(),
        symbolic_residual: fmt(&main),
        numeric_max_relative: numeric,
        control_symbolic_residual: fmt(&control),
        control_max_relative_deviation: control_dev,
        passed: main.is_zero() && numeric < 1e-12 && control == rat(-1) && control_dev < 1e-12,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    /// `min over core of (bound + allowance − |v|)`.
    pub min_slack: f64,
    /// `max over core of |v| / bound`.
    pub max_ratio: f64,
    pub worst_node: Vec<f64>,
    pub allowance: f64,
    pub passed: bool,
}

/// Checks `|v(x)| ≤ 2A₁ρ⁻¹(1+|x|²)^{N/2} + allowance` at every core node.
pub fn barrier_check(problem: &ControlProblem, v: &ScalarField, allowance: f64) -> Result<BarrierReport, VerifyError> {
    let grid = &v.grid;
    let d = grid.dim();
    if d != problem.state_dim {
        return Err(VerifyError::Shape);
    }
    let mut min_slack = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    let mut worst = vec![0.0; d];
    for i in grid.core_indices() {
        let x = grid.coord(i);
        let bound = problem.barrier(&x[..d]);
        let slack = bound + allowance - v.values[i].abs();
        max_ratio = max_ratio.max(v.values[i].abs() / bound);
        if slack < min_slack {
            min_slack = slack;
            worst = x[..d].to_vec();
        }
    }
    Ok(BarrierReport {
        min_slack,
        max_ratio,
        worst_node: worst,
        allowance,
        passed: min_slack > 0.0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    /// Notes on the printed recursion, independent of pass/fail.
    pub flags: Vec<String>,
    pub exponential: ExponentialReport,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<width$}  {}  {}\n",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.detail
            ));
        }
        for f in &self.flags {
            out.push_str(&format!("note: {f}\n"));
        }
        out
    }
}

fn op(rho: BigRational, b: Poly, s: Poly) -> Ode1dOperator {
    Ode1dOperator::new(rho, b, s).expect("suite operators have small degree")
}

/// The shipped suite: exact residuals, finder results, the printed versus
/// derived recursion, and the exponential example.
pub fn run_verification_suite(max_degree: usize) -> VerifyReport {
    let mut checks = Vec::new();
    let mut push = |name: String, passed: bool, detail: String| checks.push(CheckOutcome { name, passed, detail });
    let one_plus_x2 = Poly::from_ints(&[1, 0, 1]);

    let lin = op(rat(1), Poly::x(), Poly::zero());
    let r = polynomial_residual(&lin, &Poly::x());
    push(
        "residual: v = x under v - x v_x".into(),
        r.is_zero(),
        format!("residual {r}"),
    );
    let quad = op(rat(1), Poly::zero(), one_plus_x2.clone());
    let r = polynomial_residual(&quad, &Poly::from_ints(&[1, 0, 1]));
    push(
        "residual: v = x^2 + 1 under v - (1/2)(1+x^2) v_xx".into(),
        r.is_zero(),
        format!("residual {r}"),
    );
    let ctrl = op(rat(1), Poly::zero(), Poly::from_ints(&[2]));
    let r = polynomial_residual(&ctrl, &Poly::x());
    push(
        "control: v = x under v - v_xx".into(),
        r == Poly::x(),
        format!("residual {r} (expected x)"),
    );
    for (name, o) in [("v - x v_x", &lin), ("v - (1/2)(1+x^2) v_xx", &quad)] {
        let zero_ok = polynomial_residual(o, &Poly::zero()).is_zero();
        push(
            format!("witness: v = 0 under {name}"),
            zero_ok,
            "second solution besides the nonzero one".into(),
        );
    }

    let found = polynomial_solution_finder(&lin, 1);
    push(
        "finder: degree 1 under v - x v_x".into(),
        found == Ok(Some(Poly::x())),
        match &found {
            Ok(Some(p)) => format!("v = {p}"),
            other => format!("{other:?}"),
        },
    );
    let b1 = Poly::from_ints(&[1]);
    for n in 2..=max_degree.max(2) {
        let rho = ratio((n * (n - 1)) as i64, 2);
        let o = op(rho.clone(), b1.clone(), one_plus_x2.clone());
        let res = polynomial_solution_finder(&o, n);
        let derived = derived_recursion(n);
        let ok = matches!(&res, Ok(Some(p)) if *p == derived && polynomial_residual(&o, p).is_zero());
        push(
            format!("finder: degree {n} at rho = {rho} under rho v - v_x - (1/2)(1+x^2) v_xx"),
            ok,
            match &res {
                Ok(Some(p)) => format!("v = {p}"),
                other => format!("{other:?}"),
            },
        );
    }
    let generic = op(rat(7), b1.clone(), one_plus_x2.clone());
    let res = polynomial_solution_finder(&generic, 2);
    push(
        "finder: degree 2 at rho = 7 has no solution".into(),
        res == Ok(None),
        match &res {
            Ok(None) => "no polynomial solution".to_string(),
            Ok(Some(p)) => format!("unexpected v = {p}"),
            Err(e) => e.to_string(),
        },
    );

    let mut flags = Vec::new();
    for n in 2..=max_degree.max(2) {
        let printed = printed_recursion(n);
        let rho_printed = rat((n * (n - 1)) as i64);
        let displayed = op(rho_printed.clone(), b1.clone(), one_plus_x2.clone());
        let no_half = op(rho_printed.clone(), b1.clone(), one_plus_x2.scale(&rat(2)));
        let r_displayed = polynomial_residual(&displayed, &printed);
        let r_no_half = polynomial_residual(&no_half, &printed);
        push(
            format!("printed recursion, degree {n}: solves rho v - v_x - (1+x^2) v_xx at rho = {rho_printed}"),
            r_no_half.is_zero(),
            format!("v = {printed}"),
        );
        push(
            format!("printed recursion, degree {n}: fails the equation with 1/2 at rho = {rho_printed}"),
            !r_displayed.is_zero(),
            format!("residual {r_displayed}"),
        );
    }
    flags.push(
        "the printed recursion with rho = N(N-1) annihilates rho v - v_x - (1+x^2) v_xx; \
         for rho v - v_x - (1/2)(1+x^2) v_xx top-degree matching forces rho = N(N-1)/2, \
         with a_k (rho - k(k-1)/2) = (k+1) a_{k+1} + (1/2)(k+2)(k+1) a_{k+2}"
            .into(),
    );

    let exponential = exponential_counterexample_check();
    push(
        "exponential: v = e^x under v - v_xx".into(),
        exponential.passed,
        format!(
            "symbolic {}, numeric max relative {:.1e}, control {}",
            exponential.symbolic_residual, exponential.numeric_max_relative, exponential.control_symbolic_residual
        ),
    );
    VerifyReport {
        checks,
        flags,
        exponential,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_uniqueness_examples_have_exact_zero_residual() {
        let o = Ode1dOperator::new(rat(1), Poly::x(), Poly::zero()).unwrap();
        assert!(polynomial_residual(&o, &Poly::x()).is_zero());
        let o = Ode1dOperator::new(rat(1), Poly::zero(), Poly::from_ints(&[1, 0, 1])).unwrap();
        assert!(polynomial_residual(&o, &Poly::from_ints(&[1, 0, 1])).is_zero());
        let o = Ode1dOperator::new(rat(1), Poly::zero(), Poly::from_ints(&[2])).unwrap();
        assert_eq!(polynomial_residual(&o, &Poly::x()), Poly::x());
    }

    #[test]
    fn finder_quadratic() {
        let s = Poly::from_ints(&[1, 0, 1]);
        let o = Ode1dOperator::new(rat(1), Poly::from_ints(&[1]), s.clone()).unwrap();
        assert_eq!(
            polynomial_solution_finder(&o, 2).unwrap(),
            Some(Poly::from_ints(&[3, 2, 1]))
        );
        let o = Ode1dOperator::new(rat(7), Poly::from_ints(&[1]), s).unwrap();
        assert_eq!(polynomial_solution_finder(&o, 2).unwrap(), None);
        let o = Ode1dOperator::new(rat(1), Poly::x(), Poly::zero()).unwrap();
        assert_eq!(polynomial_solution_finder(&o, 1).unwrap(), Some(Poly::x()));
    }

    #[test]
    fn finder_reports_free_coefficient() {
        // ρ = 0, b = 0, s = 0: every polynomial solves it and nothing pins a_0.
        let o = Ode1dOperator::new(rat(0), Poly::zero(), Poly::zero()).unwrap();
        assert_eq!(
            polynomial_solution_finder(&o, 1),
            Err(VerifyError::SingularPivot { k: 0 })
        );
    }

    #[test]
    fn degree_limit() {
        assert!(matches!(
            Ode1dOperator::new(rat(1), Poly::from_ints(&[0, 0, 0, 0, 0, 1]), Poly::zero()),
            Err(VerifyError::Degree {
                which: "drift",
                degree: 5
            })
        ));
    }

    #[test]
    fn printed_and_derived_recursions() {
        // N = 3: printed a_2 = 3/4; matching the equation with ½ gives a_2 = 3/(3 − 1) = 3/2.
        assert_eq!(printed_recursion(3).coeff(2), ratio(3, 4));
        assert_eq!(derived_recursion(3).coeff(2), ratio(3, 2));
        assert_eq!(derived_recursion(2), Poly::from_ints(&[3, 2, 1]));
    }

    #[test]
    fn suite_passes() {
        let r = run_verification_suite(6);
        assert!(r.all_passed(), "{}", r.table());
        assert!(!r.flags.is_empty());
    }

    #[test]
    fn exponential_example() {
        let e = exponential_counterexample_check();
        assert!(e.symbolic_zero && e.passed);
        assert_eq!(e.control_symbolic_residual, "-1·e^x");
    }
}
