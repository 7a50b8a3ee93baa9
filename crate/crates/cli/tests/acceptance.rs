//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs with `harness = false` so the verdict lines are never captured.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use epia::analysis::{
    epsilon_floor_sweep, manufactured_convergence, manufactured_solution_error, rho_scaling_sweep, FloorSweepOptions,
    SCALED_QUANTITIES,
};
use epia::discretize::{build_action_quadrature, ScalarField};
use epia::linsolve::{assemble_operator, BoundaryKind, SOLVER_TOL};
use epia::mcoracle::{mc_value_averaged, McOptions};
use epia::pia::{reference_solution, DiscretizationSpec, PiaSolver, StopRule, TraceOptions};
use epia::policy::{f_pi, gibbs_policy, hamiltonian_f};
use epia::problem::{ProblemSpec, MAX_DIM};
use epia::verify::{barrier_check, run_verification_suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PI: f64 = std::f64::consts::PI;

struct Verdict {
    passed: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn periodic(n: usize) -> DiscretizationSpec {
    DiscretizationSpec {
        bounds: vec![(-PI, PI)],
        n: vec![n],
        core_fraction: 0.5,
        action_nodes: 8,
        boundary: BoundaryKind::Periodic,
    }
}

fn extrapolated(lo: f64, hi: f64, n: usize) -> DiscretizationSpec {
    DiscretizationSpec {
        bounds: vec![(lo, hi)],
        n: vec![n],
        core_fraction: 0.5,
        action_nodes: 8,
        boundary: BoundaryKind::LinearExtrapolation,
    }
}

fn ornstein_uhlenbeck() -> ProblemSpec {
    toml::from_str(
        r#"
state_dim = 1
action_dim = 1
rho = 2
ellipticity = 1
[expressions]
r = "x1^2"
b = ["-x1"]
sigma = [["1"]]
[growth]
N = 2
A1 = 1
A2 = 1
A3 = 0
"#,
    )
    .unwrap()
}

fn monotone_improvement() -> Verdict {
    let bound = -10.0 * SOLVER_TOL;
    let stop = StopRule {
        max_iters: 40,
        delta_tol: 0.0,
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, spec, disc) in [
        ("bounded-trig", ProblemSpec::family("bounded-trig", &[]), periodic(129)),
        (
            "linear-growth",
            ProblemSpec::family("linear-growth", &[]),
            extrapolated(-4.0, 4.0, 129),
        ),
    ] {
        let p = spec.build().unwrap();
        let disc = disc.build(&p).unwrap();
        let solver = PiaSolver::new(&p, &disc).unwrap();
        let state = solver.step(&ScalarField::zeros(&disc.grid), 1).unwrap();
        let sys_ok = assemble_operator(&disc.grid, &state.coeffs, p.rho, p.lambda, &disc.bc)
            .unwrap()
            .is_m_matrix();
        let opts = TraceOptions {
            seminorms: false,
            ..Default::default()
        };
        let out = solver.run(&ScalarField::zeros(&disc.grid), &stop, &opts).unwrap();
        let worst = out.trace.worst_monotonicity();
        ok &= sys_ok && out.trace.len() == 40 && worst >= bound;
        parts.push(format!(
            "{name}: {} iterations, M-matrix {sys_ok}, worst {worst:.2e}",
            out.trace.len()
        ));
    }
    verdict(ok, format!("{} (bound {bound:.0e})", parts.join("; ")))
}

fn geometric_convergence() -> Verdict {
    let template = ProblemSpec::family("small-diffusion", &[("eps0", 0.0)]);
    let spec = periodic(65);
    let opts = FloorSweepOptions::default();
    let sweep = epsilon_floor_sweep(&template, &[0.0], 20.0, &spec, &opts).unwrap();
    let row = &sweep.rows[0];
    let Some(fit) = &row.fit else {
        return verdict(false, format!("rate fit failed: {:?}", row.error));
    };
    let p = template.with_override("rho", 20.0).build().unwrap();
    let disc = spec.build(&p).unwrap();
    let reference = reference_solution(&p, &disc, &disc.refined(2), 60).unwrap();
    let amplitude = reference.v.sup_norm();
    let mms = manufactured_solution_error(&p, &disc, amplitude).unwrap();
    let ok = fit.q <= 0.9 && fit.floor <= 10.0 * mms.weighted_error;
    verdict(
        ok,
        format!(
            "q {:.3e} (<= 0.9), floor {:.3e} vs 10 x manufactured error {:.3e}",
            fit.q,
            fit.floor,
            10.0 * mms.weighted_error
        ),
    )
}

fn floor_scaling() -> Verdict {
    let template = ProblemSpec::family("small-diffusion", &[]);
    let spec = periodic(65);
    let opts = FloorSweepOptions::default();
    let eps = [0.0125, 0.025, 0.05];
    let sweep = epsilon_floor_sweep(&template, &eps, 20.0, &spec, &opts).unwrap();
    let floors = sweep.floors();
    let doubled_rho = epsilon_floor_sweep(&template, &[0.05], 40.0, &spec, &opts).unwrap();
    let rho_ratio = floors[2] / doubled_rho.floors()[0];
    let monotone = floors.windows(2).all(|w| w[1] > w[0]);
    let eps_ratios: Vec<f64> = floors.windows(2).map(|w| w[1] / w[0]).collect();
    let ok = monotone
        && eps_ratios.iter().all(|r| (2.0..=8.0).contains(r))
        && (1.4..=3.0).contains(&rho_ratio)
        && sweep.all_converged();
    verdict(
        ok,
        format!(
            "floors {:?} at rho 20, eps0 doubling ratios {:?} (want [2, 8]), rho doubling ratio {rho_ratio:.3} (want [1.4, 3])",
            floors.iter().map(|f| format!("{f:.4e}")).collect::<Vec<_>>(),
            eps_ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn rho_scaling() -> Verdict {
    let template = ProblemSpec::family("bounded-trig", &[]);
    let sweep = rho_scaling_sweep(
        &template,
        &[10.0, 20.0, 40.0, 80.0],
        &periodic(129),
        &StopRule::default(),
        0.5,
    )
    .unwrap();
    let variation = sweep.variation();
    let ratios = sweep.sup_ratios();
    let ok =
        sweep.all_converged() && variation.iter().all(|v| *v <= 2.0) && ratios.iter().all(|r| (1.6..=2.4).contains(r));
    let var: Vec<String> = SCALED_QUANTITIES
        .iter()
        .zip(variation)
        .map(|(k, v)| format!("{k} {v:.2}"))
        .collect();
    verdict(
        ok,
        format!(
            "variation (want <= 2): {}; sup ratios {:?}",
            var.join(", "),
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn gibbs_optimality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let families = ["bounded-trig", "linear-growth", "lq-like"];
    let mut worst_identity = 0.0f64;
    let mut min_gap = f64::INFINITY;
    let mut failures = 0;
    let instances = 1000;
    for k in 0..instances {
        let family = families[k % families.len()];
        let d = 1 + rng.random_range(0..2usize);
        let l = 1 + rng.random_range(0..2usize);
        let lambda = rng.random_range(0.05..2.0);
        let p = ProblemSpec::family(family, &[("d", d as f64), ("L", l as f64), ("lambda", lambda)])
            .build()
            .unwrap();
        let quad = build_action_quadrature(l, 4 + rng.random_range(0..5usize)).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let grad: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut hess = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, j) in (0..d).flat_map(|i| (i..d).map(move |j| (i, j))) {
            let v = rng.random_range(-2.0..2.0);
            hess[i][j] = v;
            hess[j][i] = v;
        }
        let gamma = gibbs_policy(&p, &quad, &x, &grad, &hess).unwrap();
        let best = f_pi(&p, &quad, &x, &grad, &hess, &gamma).unwrap();
        let closed = hamiltonian_f(&p, &quad, &x, &grad, &hess).unwrap();
        worst_identity = worst_identity.max((best - closed).abs() / closed.abs().max(f64::MIN_POSITIVE));
        let tol = 1e-12 * best.abs().max(1.0);
        for _ in 0..10 {
            let mut pi: Vec<f64> = gamma.iter().map(|g| g * (1.0 + rng.random_range(-0.5..0.5))).collect();
            let mass: f64 = pi.iter().zip(&quad.weights).map(|(a, w)| a * w).sum();
            pi.iter_mut().for_each(|a| *a /= mass);
            let gap = best - f_pi(&p, &quad, &x, &grad, &hess, &pi).unwrap();
            min_gap = min_gap.min(gap / tol);
            if gap <= tol {
                failures += 1;
            }
        }
    }
    let ok = failures == 0 && worst_identity <= 1e-12;
    verdict(
        ok,
        format!(
            "{instances} instances x 10 perturbations, {failures} without strict gap, smallest gap {min_gap:.2e} x tolerance, log-sum-exp identity {worst_identity:.1e} relative"
        ),
    )
}

fn feynman_kac() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, spec, disc) in [
        ("ou", ornstein_uhlenbeck(), extrapolated(-6.0, 6.0, 241)),
        (
            "bounded-trig",
            ProblemSpec::family("bounded-trig", &[("rho", 20.0)]),
            periodic(129),
        ),
    ] {
        let p = spec.build().unwrap();
        let disc = disc.build(&p).unwrap();
        let state = PiaSolver::new(&p, &disc)
            .unwrap()
            .step(&ScalarField::zeros(&disc.grid), 1)
            .unwrap();
        let h = disc.grid.h()[0];
        let core = disc.grid.core_indices();
        let opts = McOptions {
            npaths: 10_000,
            seed: 2024,
            ..Default::default()
        };
        let mut worst = 0.0f64;
        let mut mc_at_origin = None;
        let mut points: Vec<[f64; 1]> = (0..5)
            .map(|k| [disc.grid.coord(core[k * (core.len() - 1) / 4])[0]])
            .collect();
        if name == "ou" {
            points.push([0.0]);
        }
        for x in &points {
            let est = mc_value_averaged(&state.coeffs, p.lambda, p.rho, &disc.bc, x, &opts).unwrap();
            let allowance = 3.0 * est.stderr + h * h + est.dt + est.tail_bound;
            let diff = (state.v.interpolate(x) - est.mean).abs();
            ok &= est.valid && diff <= allowance;
            worst = worst.max(diff / allowance);
            if x[0] == 0.0 {
                mc_at_origin = Some((est.mean, allowance));
            }
        }
        if name == "ou" {
            let (mean, allowance) = mc_at_origin.unwrap();
            let closed = (mean - 0.125).abs();
            ok &= closed <= allowance;
            parts.push(format!(
                "ou closed form |mc - 0.125| {closed:.2e} (allowance {allowance:.2e})"
            ));
        }
        parts.push(format!("{name}: worst |pde - mc| / allowance {worst:.3}"));
    }
    verdict(ok, parts.join("; "))
}

fn counterexamples() -> Verdict {
    let report = run_verification_suite(6);
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let ok = report.all_passed() && !report.flags.is_empty();
    verdict(
        ok,
        format!(
            "{} exact checks, {} failed, {} discrepancy flags",
            report.checks.len(),
            failed.len(),
            report.flags.len()
        ),
    )
}

fn barrier() -> Verdict {
    let solve = |kappa: f64| {
        let p = ProblemSpec::family("linear-growth", &[("kappa", kappa)])
            .build()
            .unwrap();
        let disc = extrapolated(-4.0, 4.0, 129).build(&p).unwrap();
        let out = PiaSolver::new(&p, &disc)
            .unwrap()
            .run(
                &ScalarField::zeros(&disc.grid),
                &StopRule::default(),
                &TraceOptions::default(),
            )
            .unwrap();
        (p, out)
    };
    let allowance = 10.0 * SOLVER_TOL;
    let mut ok = true;
    let mut parts = Vec::new();
    for kappa in [0.5, 0.0] {
        let (p, out) = solve(kappa);
        let r = barrier_check(&p, &out.state.v, allowance).unwrap();
        ok &= out.converged && r.passed && r.min_slack > 0.0;
        parts.push(format!(
            "kappa {kappa}: slack {:.3e}, ratio {:.3}",
            r.min_slack, r.max_ratio
        ));
        if kappa == 0.0 {
            let mut halved = p.clone();
            halved.growth.a1 *= 0.5;
            let n = barrier_check(&halved, &out.state.v, allowance).unwrap();
            ok &= !n.passed;
            parts.push(format!(
                "halved A1 control: ratio {:.3} at {:?}, {}",
                n.max_ratio,
                n.worst_node,
                if n.passed { "not detected" } else { "detected" }
            ));
        }
    }
    verdict(ok, parts.join("; "))
}

fn discretization_order() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for d in [1usize, 2] {
        let p = ProblemSpec::family("bounded-trig", &[("d", d as f64)]).build().unwrap();
        let n0 = if d == 1 { 33 } else { 17 };
        let disc = DiscretizationSpec {
            bounds: vec![(-PI, PI); d],
            n: vec![n0; d],
            core_fraction: 0.5,
            action_nodes: 4,
            boundary: BoundaryKind::Periodic,
        }
        .build(&p)
        .unwrap();
        let levels = manufactured_convergence(&p, &disc, 1.0, 3).unwrap();
        let ratios: Vec<f64> = levels.windows(2).map(|w| w[0].sup_error / w[1].sup_error).collect();
        ok &= ratios.iter().all(|r| (3.2..=4.8).contains(r));
        parts.push(format!(
            "{d}D ratios {:?}",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ));
    }
    verdict(ok, parts.join("; "))
}

fn cli(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_epia"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

/// Numeric leaves of a JSON document, keyed by path.
fn numeric_leaves(v: &serde_json::Value, path: String, out: &mut Vec<(String, f64)>) {
    match v {
        serde_json::Value::Number(n) => out.push((path, n.as_f64().unwrap())),
        serde_json::Value::Array(a) => a
            .iter()
            .enumerate()
            .for_each(|(i, x)| numeric_leaves(x, format!("{path}[{i}]"), out)),
        serde_json::Value::Object(m) => m
            .iter()
            .for_each(|(k, x)| numeric_leaves(x, format!("{path}.{k}"), out)),
        _ => {}
    }
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("run.toml"),
        r#"
[problem]
family = "bounded-trig"
[discretization]
bounds = [[-3.141592653589793, 3.141592653589793]]
n = [129]
boundary = "periodic"
[analysis]
rho_list = [10.0, 20.0, 40.0, 80.0]
[mc]
npaths = 2000
points = [[0.0], [1.0]]
"#,
    )
    .unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (what, args, files) in [
        (
            "run",
            vec!["run", "--config", "run.toml"],
            vec!["summary.json", "v.bin", "policy.csv"],
        ),
        (
            "sweep",
            vec!["sweep", "--config", "run.toml", "--sweep", "rho"],
            vec!["summary.json", "rho_sweep.csv"],
        ),
        ("mc-check", vec!["mc-check", "--config", "run.toml"], vec!["mc.json"]),
    ] {
        let mut outputs = Vec::new();
        for (tag, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
            let out_dir = format!("{what}-{tag}");
            let mut full = args.clone();
            full.extend(["--threads", threads, "--out", &out_dir]);
            let o = cli(dir, &full);
            if !o.status.success() {
                return verdict(false, format!("{what} failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
            outputs.push(dir.join(out_dir));
        }
        let identical = files
            .iter()
            .all(|f| std::fs::read(outputs[0].join(f)).unwrap() == std::fs::read(outputs[1].join(f)).unwrap());
        let leaves = |p: &Path| {
            let v: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join(files[0])).unwrap()).unwrap();
            let mut out = Vec::new();
            numeric_leaves(&v, String::new(), &mut out);
            out
        };
        let (serial, parallel) = (leaves(&outputs[0]), leaves(&outputs[2]));
        let worst = serial
            .iter()
            .zip(&parallel)
            .map(|((ka, a), (kb, b))| {
                if ka != kb {
                    f64::INFINITY
                } else if a == b {
                    0.0
                } else {
                    (a - b).abs() / a.abs().max(1.0)
                }
            })
            .fold(0.0f64, f64::max);
        ok &= identical && serial.len() == parallel.len() && worst <= 1e-13;
        parts.push(format!(
            "{what}: serial reruns identical {identical}, parallel deviation {worst:.1e}"
        ));
    }
    verdict(ok, parts.join("; "))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("monotone improvement", monotone_improvement),
        ("geometric convergence", geometric_convergence),
        ("perturbation floor scaling", floor_scaling),
        ("discount scaling of norms", rho_scaling),
        ("Gibbs variational optimality", gibbs_optimality),
        ("Monte-Carlo cross-check", feynman_kac),
        ("exact non-uniqueness certificates", counterexamples),
        ("growth barrier", barrier),
        ("discretization order", discretization_order),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == id.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        println!(
            "criterion {id:>2} {:<34} {}  {} [{:.1}s]",
            name,
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        if !v.passed {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
