use epia::analysis::{fit_geometric_rate, holder_seminorm, weighted_h1_error, Ball};
use epia::discretize::{build_action_quadrature, Grid, ScalarField};
use epia::linsolve::{assemble_operator, BoundaryKind};
use epia::pia::{DiscretizationSpec, PiaSolver, StopRule, TraceOptions};
use epia::policy::{f_pi_from_integrand, gibbs_density, log_sum_exp};
use epia::problem::ProblemSpec;
use proptest::prelude::*;

fn line_grid(n: usize) -> Grid {
    Grid::new(&[(-2.0, 2.0)], &[n], 0.5).unwrap()
}

fn bounded_trig(rho: f64, lambda: f64, n: usize) -> (epia::problem::ControlProblem, epia::pia::Discretization) {
    let p = ProblemSpec::family("bounded-trig", &[("rho", rho), ("lambda", lambda)])
        .build()
        .unwrap();
    let pi = std::f64::consts::PI;
    let d = DiscretizationSpec {
        bounds: vec![(-pi, pi)],
        n: vec![n],
        core_fraction: 0.5,
        action_nodes: 6,
        boundary: BoundaryKind::Periodic,
    }
    .build(&p)
    .unwrap();
    (p, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadrature_integrates_monomials(l in 1usize..=2, nodes in 2usize..=6, seed in 0usize..100) {
        let q = build_action_quadrature(l, nodes).unwrap();
        let max_deg = 2 * nodes - 1;
        let a = seed % (max_deg + 1);
        let b = (seed / 7) % (max_deg + 1);
        let got = q.integrate(|u| u[0].powi(a as i32) * if l == 2 { u[1].powi(b as i32) } else { 1.0 });
        let exact = 1.0 / (a as f64 + 1.0) * if l == 2 { 1.0 / (b as f64 + 1.0) } else { 1.0 };
        prop_assert!((got - exact).abs() < 1e-13, "{got} vs {exact}");
    }

    #[test]
    fn log_sum_exp_matches_naive_sum(
        f in prop::collection::vec(-5.0f64..5.0, 2..12),
        lambda in 0.2f64..3.0,
    ) {
        let w = vec![1.0 / f.len() as f64; f.len()];
        let naive = lambda * f.iter().zip(&w).map(|(v, w)| w * (v / lambda).exp()).sum::<f64>().ln();
        let stable = log_sum_exp(&f, &w, lambda);
        prop_assert!((naive - stable).abs() <= 1e-12 * naive.abs().max(1.0));
    }

    #[test]
    fn log_sum_exp_survives_large_exponents(shift in 500.0f64..5000.0, lambda in 0.01f64..0.1) {
        let f = [shift, shift - 1.0, shift - 3.0];
        let w = [0.25, 0.5, 0.25];
        let v = log_sum_exp(&f, &w, lambda);
        prop_assert!(v.is_finite());
        prop_assert!(v <= shift && v >= shift + lambda * 0.25f64.ln() - 1e-9);
    }

    #[test]
    fn gibbs_density_maximises_entropy_regularised_objective(
        f in prop::collection::vec(-3.0f64..3.0, 3..10),
        lambda in 0.1f64..2.0,
        bumps in prop::collection::vec(-0.9f64..0.9, 10),
    ) {
        let m = f.len();
        let w = vec![1.0 / m as f64; m];
        let gamma = gibbs_density(&f, &w, lambda);
        let mass: f64 = gamma.iter().zip(&w).map(|(g, w)| g * w).sum();
        prop_assert!((mass - 1.0).abs() < 1e-12);
        let best = f_pi_from_integrand(&f, &w, lambda, &gamma);
        prop_assert!((best - log_sum_exp(&f, &w, lambda)).abs() <= 1e-12 * best.abs().max(1.0));
        // Multiplicative perturbation, renormalised.
        let mut pi: Vec<f64> = gamma.iter().enumerate().map(|(j, g)| g * (1.0 + bumps[j % bumps.len()])).collect();
        let z: f64 = pi.iter().zip(&w).map(|(p, w)| p * w).sum();
        pi.iter_mut().for_each(|p| *p /= z);
        let other = f_pi_from_integrand(&f, &w, lambda, &pi);
        prop_assert!(other <= best + 1e-12);
    }

    #[test]
    fn holder_seminorm_is_homogeneous_and_shift_invariant(
        a in 0.1f64..3.0,
        c in -5.0f64..5.0,
        scale in 0.1f64..10.0,
        alpha in 0.1f64..0.9,
    ) {
        let g = line_grid(65);
        let w = ScalarField::from_fn(&g, |x| (a * x[0]).sin());
        let region = g.core_bounds();
        let base = holder_seminorm(&w, 0, alpha, &region).unwrap();
        let scaled = ScalarField::from_fn(&g, |x| scale * (a * x[0]).sin() + c);
        let got = holder_seminorm(&scaled, 0, alpha, &region).unwrap();
        prop_assert!((got - scale * base).abs() <= 1e-10 * got.max(1.0));
    }

    #[test]
    fn holder_seminorm_grows_with_region(alpha in 0.1f64..0.9, k in 1.0f64..4.0) {
        let g = line_grid(65);
        let w = ScalarField::from_fn(&g, |x| (k * x[0]).cos() + x[0] * x[0]);
        let small = holder_seminorm(&w, 0, alpha, &[(-0.5, 0.5)]).unwrap();
        let large = holder_seminorm(&w, 0, alpha, &[(-1.0, 1.0)]).unwrap();
        prop_assert!(small <= large);
    }

    #[test]
    fn weighted_error_satisfies_triangle_inequality(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        c in -2.0f64..2.0,
        rho in 0.5f64..50.0,
    ) {
        let g = line_grid(81);
        let u = ScalarField::from_fn(&g, |x| a * x[0].sin());
        let v = ScalarField::from_fn(&g, |x| b * x[0] * x[0]);
        let w = ScalarField::from_fn(&g, |x| c * (2.0 * x[0]).cos());
        let ball = Ball::unit(&[0.0]);
        let d = |p: &ScalarField, q: &ScalarField| weighted_h1_error(p, q, rho, &ball).unwrap().sqrt();
        prop_assert!(d(&u, &w) <= d(&u, &v) + d(&v, &w) + 1e-12);
        prop_assert!(d(&u, &u) == 0.0);
        prop_assert!((d(&u, &v) - d(&v, &u)).abs() < 1e-14);
    }

    #[test]
    fn rate_fit_tolerates_noise(
        q in 0.2f64..0.8,
        c in 0.5f64..5.0,
        noise in prop::collection::vec(-0.01f64..0.01, 15),
    ) {
        let e: Vec<f64> = (0..15).map(|n| c * q.powi(n as i32) * (1.0 + noise[n])).collect();
        let fit = fit_geometric_rate(&e, None).unwrap();
        prop_assert!((fit.q - q).abs() <= 0.1 * q, "fitted {} for {}", fit.q, q);
    }

    #[test]
    fn assembled_operator_is_m_matrix(rho in 0.5f64..50.0, lambda in 0.05f64..2.0) {
        let (p, disc) = bounded_trig(rho, lambda, 33);
        let solver = PiaSolver::new(&p, &disc).unwrap();
        let v = ScalarField::from_fn(&disc.grid, |x| 0.3 * x[0].sin());
        let state = solver.step(&v, 1).unwrap();
        let sys = assemble_operator(&disc.grid, &state.coeffs, rho, lambda, &disc.bc).unwrap();
        prop_assert!(sys.is_m_matrix());
        let dup: Vec<usize> = sys.duplicates.iter().map(|d| d.0).collect();
        for i in 0..sys.matrix.n {
            let row: Vec<(usize, f64)> = sys.matrix.row(i).collect();
            for &(j, a) in &row {
                if j == i {
                    prop_assert!(a > 0.0);
                } else {
                    prop_assert!(a <= 0.0, "positive off-diagonal {a} at ({i}, {j})");
                }
            }
            if !dup.contains(&i) {
                // Row sums recover the discount: constants are in the kernel of the generator.
                let sum: f64 = row.iter().map(|e| e.1).sum();
                prop_assert!((sum - rho).abs() <= 1e-9 * rho.max(sys.matrix.diag(i)));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn policy_iteration_never_decreases(rho in 1.0f64..40.0, lambda in 0.05f64..1.0) {
        let (p, disc) = bounded_trig(rho, lambda, 33);
        let stop = StopRule { max_iters: 12, delta_tol: 0.0 };
        let opts = TraceOptions { seminorms: false, ..Default::default() };
        let out = PiaSolver::new(&p, &disc).unwrap().run(&ScalarField::zeros(&disc.grid), &stop, &opts).unwrap();
        prop_assert!(out.trace.worst_monotonicity() >= -1e-9);
    }
}
