//! Subcommand implementations. Each returns the process exit code on success;
//! errors map to exit code 1 in `main`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use epia::analysis::plot::{write_line_plot, Axes, Series};
use epia::analysis::{
    epsilon_floor_sweep, fit_geometric_rate, rho_scaling_sweep, FloorSweepOptions, RateFit, SCALED_QUANTITIES,
};
use epia::discretize::{read_field_binary, write_field_binary, write_field_csv, ScalarField};
use epia::mcoracle::{mc_value_averaged, McEstimate};
use epia::pia::{reference_solution, PiaSolver, StopRule, TraceOptions};
use epia::problem::{validate_problem, ControlProblem, Regime, ValidationOptions};
use epia::verify::{barrier_check, run_verification_suite, BarrierReport};
use serde::Serialize;
use serde_json::json;

use crate::config::Loaded;

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_CONVERGED: u8 = 2;

pub fn version_string() -> String {
    format!("epia {}", env!("CARGO_PKG_VERSION"))
}

/// Output directory built under a staging name and renamed into place when done.
pub struct ArtifactDir {
    staging: PathBuf,
    target: PathBuf,
}

impl ArtifactDir {
    pub fn create(target: &Path) -> Result<ArtifactDir> {
        if target.exists() && fs::read_dir(target)?.next().is_some() {
            bail!("output directory {} exists and is not empty", target.display());
        }
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let parent = target
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging).with_context(|| format!("creating {}", staging.display()))?;
        Ok(ArtifactDir {
            staging,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(self.path(name), text + "\n")?;
        Ok(())
    }

    pub fn write_echo(&self, loaded: &Loaded) -> Result<()> {
        fs::write(self.path("config.toml"), toml::to_string(&loaded.echo())?)?;
        fs::write(self.path("version.txt"), version_string() + "\n")?;
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)
            .with_context(|| format!("moving artifacts into {}", self.target.display()))?;
        Ok(self.target.clone())
    }
}

impl Drop for ArtifactDir {
    fn drop(&mut self) {
        // Only reached with the staging directory still present when a command failed.
        if self.staging.exists() {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

pub struct CommonFlags {
    pub out: Option<PathBuf>,
    pub strict: bool,
    pub plots: bool,
}

fn output_dir(loaded: &Loaded, flags: &CommonFlags) -> PathBuf {
    flags
        .out
        .clone()
        .unwrap_or_else(|| loaded.resolve(&loaded.config.output))
}

/// Validates the problem and writes the report; strict mode refuses violations.
fn check_assumptions(problem: &ControlProblem, dir: &ArtifactDir, strict: bool) -> Result<()> {
    let report = validate_problem(problem, &ValidationOptions::default())?;
    dir.write_json("validation.json", &report)?;
    let violations: Vec<_> = report.violations().collect();
    if !violations.is_empty() {
        let names: Vec<String> = violations
            .iter()
            .map(|c| format!("{}: {}", c.assumption.name(), c.detail))
            .collect();
        if strict {
            bail!("assumption violations under --strict: {}", names.join("; "));
        }
        for n in names {
            log::warn!("assumption violated: {n}");
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FinalErrors {
    increment: f64,
    sup_error: Option<f64>,
    grad_error: Option<f64>,
    weighted_error: Option<f64>,
    hjb_residual: f64,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    version: String,
    converged: bool,
    iters: usize,
    final_errors: FinalErrors,
    fitted_rate: Option<RateFit>,
    fit_error: Option<String>,
    worst_monotonicity: f64,
    sup_norm: f64,
    reference: Option<serde_json::Value>,
    barrier: Option<BarrierReport>,
}

pub fn cmd_run(loaded: &Loaded, flags: &CommonFlags) -> Result<u8> {
    let cfg = &loaded.config;
    let dir = ArtifactDir::create(&output_dir(loaded, flags))?;
    dir.write_echo(loaded)?;
    let problem = loaded.problem.build()?;
    check_assumptions(&problem, &dir, flags.strict)?;
    let disc = cfg.discretization.build(&problem)?;
    let v0 = match &cfg.pia.v0 {
        None => ScalarField::zeros(&disc.grid),
        Some(p) => {
            let f = read_field_binary(&loaded.resolve(p), disc.grid.core_fraction())?;
            if f.grid != disc.grid {
                bail!("initial value grid does not match the discretization");
            }
            f
        }
    };
    let reference = if cfg.pia.reference_factor >= 2 {
        let fine = disc.refined(cfg.pia.reference_factor);
        Some(reference_solution(&problem, &disc, &fine, cfg.pia.reference_max_iters)?)
    } else {
        None
    };
    let solver = PiaSolver::new(&problem, &disc)?;
    let opts = TraceOptions {
        alpha: cfg.analysis.alpha,
        reference: reference.as_ref().map(|r| &r.v),
        ball: None,
        seminorms: true,
    };
    let out = solver.run(&v0, &cfg.pia.stop(), &opts)?;
    let records = out.trace.records();
    let last = records.last().expect("at least one iteration");
    out.trace.write_csv(&dir.path("trace.csv"))?;
    write_field_binary(&out.state.v, &dir.path("v.bin"))?;
    write_field_csv(&out.state.v, &dir.path("v.csv"))?;
    out.state.policy.write_csv(&dir.path("policy.csv"))?;

    let fit_series: Vec<f64> = if reference.is_some() {
        records.iter().filter_map(|r| r.weighted_error).collect()
    } else {
        records.iter().map(|r| r.increment).collect()
    };
    let (fitted_rate, fit_error) = match fit_geometric_rate(&fit_series, None) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let barrier = if problem.regime == Regime::Unbounded {
        Some(barrier_check(
            &problem,
            &out.state.v,
            10.0 * epia::linsolve::SOLVER_TOL,
        )?)
    } else {
        None
    };
    let summary = RunSummary {
        version: version_string(),
        converged: out.converged,
        iters: records.len(),
        final_errors: FinalErrors {
            increment: last.increment,
            sup_error: last.sup_error,
            grad_error: last.grad_error,
            weighted_error: last.weighted_error,
            hjb_residual: solver.hjb_residual(&out.state.v),
        },
        fitted_rate,
        fit_error,
        worst_monotonicity: out.trace.worst_monotonicity(),
        sup_norm: out.state.v.sup_norm(),
        reference: reference.as_ref().map(|r| {
            json!({
                "iterations": r.iterations,
                "converged": r.converged,
                "hjb_residual": r.hjb_residual,
            })
        }),
        barrier,
    };
    dir.write_json("summary.json", &summary)?;
    if flags.plots {
        let mut series = vec![Series {
            label: "increment".into(),
            points: records.iter().map(|r| (r.n as f64, r.increment)).collect(),
        }];
        if reference.is_some() {
            series.push(Series {
                label: "weighted error".into(),
                points: records
                    .iter()
                    .map(|r| (r.n as f64, r.weighted_error.unwrap_or(f64::NAN)))
                    .collect(),
            });
        }
        write_line_plot(
            &dir.path("errors.svg"),
            "policy iteration",
            "n",
            "error",
            &series,
            Axes {
                log_x: false,
                log_y: true,
            },
        )?;
    }
    let target = dir.finish()?;
    println!(
        "{} after {} iterations (increment {:.3e}); artifacts in {}",
        if out.converged { "converged" } else { "not converged" },
        records.len(),
        last.increment,
        target.display()
    );
    Ok(if out.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepKind {
    Rho,
    Eps0,
}

pub fn cmd_sweep(loaded: &Loaded, kind: SweepKind, flags: &CommonFlags) -> Result<u8> {
    let cfg = &loaded.config;
    match kind {
        SweepKind::Rho if cfg.analysis.rho_list.is_empty() => bail!("analysis.rho_list is empty"),
        SweepKind::Eps0 if cfg.analysis.eps0_list.is_empty() => bail!("analysis.eps0_list is empty"),
        _ => {}
    }
    let dir = ArtifactDir::create(&output_dir(loaded, flags))?;
    dir.write_echo(loaded)?;
    let ok = match kind {
        SweepKind::Rho => {
            let sweep = rho_scaling_sweep(
                &loaded.problem,
                &cfg.analysis.rho_list,
                &cfg.discretization,
                &cfg.pia.stop(),
                cfg.analysis.alpha,
            )?;
            sweep.write_csv(&dir.path("rho_sweep.csv"))?;
            let variation = sweep.variation();
            dir.write_json(
                "summary.json",
                &json!({
                    "version": version_string(),
                    "all_converged": sweep.all_converged(),
                    "rows": sweep.rows,
                    "variation": SCALED_QUANTITIES.iter().zip(variation).map(|(k, v)| (k.to_string(), v)).collect::<std::collections::BTreeMap<_, _>>(),
                    "sup_ratios": sweep.sup_ratios(),
                }),
            )?;
            if flags.plots {
                let series: Vec<Series> = SCALED_QUANTITIES
                    .iter()
                    .enumerate()
                    .map(|(k, name)| Series {
                        label: name.to_string(),
                        points: sweep.rows.iter().map(|r| (r.rho, r.quantities[k])).collect(),
                    })
                    .collect();
                write_line_plot(
                    &dir.path("rho_sweep.svg"),
                    "scaled norms",
                    "rho",
                    "value",
                    &series,
                    Axes {
                        log_x: true,
                        log_y: true,
                    },
                )?;
            }
            for r in &sweep.rows {
                println!(
                    "rho {:>8}  converged {:<5}  {}",
                    r.rho,
                    r.converged,
                    r.quantities
                        .iter()
                        .map(|q| format!("{q:.4e}"))
                        .collect::<Vec<_>>()
                        .join("  ")
                );
            }
            sweep.all_converged()
        }
        SweepKind::Eps0 => {
            let rho = match cfg.analysis.eps0_rho {
                Some(r) => r,
                None => loaded.problem.build()?.rho,
            };
            let opts = FloorSweepOptions {
                stop: StopRule {
                    max_iters: cfg.analysis.floor_iters,
                    delta_tol: cfg.pia.delta_tol,
                },
                fine_factor: cfg.pia.reference_factor.max(2),
                strict: flags.strict,
                ..Default::default()
            };
            let sweep = epsilon_floor_sweep(
                &loaded.problem,
                &cfg.analysis.eps0_list,
                rho,
                &cfg.discretization,
                &opts,
            )?;
            sweep.write_csv(&dir.path("eps0_sweep.csv"))?;
            for r in &sweep.rows {
                dir.write_json(&format!("row_eps0_{}.json", r.eps0), r)?;
            }
            dir.write_json(
                "summary.json",
                &json!({
                    "version": version_string(),
                    "all_converged": sweep.all_converged(),
                    "rho": rho,
                    "eps0": sweep.rows.iter().map(|r| r.eps0).collect::<Vec<_>>(),
                    "floors": sweep.floors(),
                    "rates": sweep.rows.iter().map(|r| r.fit.as_ref().map(|f| f.q)).collect::<Vec<_>>(),
                }),
            )?;
            if flags.plots {
                let series: Vec<Series> = sweep
                    .rows
                    .iter()
                    .map(|r| Series {
                        label: format!("eps0 = {}", r.eps0),
                        points: r.errors.iter().enumerate().map(|(n, e)| (n as f64, *e)).collect(),
                    })
                    .collect();
                let log_y = Axes {
                    log_x: false,
                    log_y: true,
                };
                write_line_plot(
                    &dir.path("eps0_errors.svg"),
                    "weighted error",
                    "n",
                    "error",
                    &series,
                    log_y,
                )?;
                let floors = Series {
                    label: "floor".into(),
                    points: sweep.rows.iter().map(|r| r.eps0).zip(sweep.floors()).collect(),
                };
                let log_log = Axes {
                    log_x: true,
                    log_y: true,
                };
                write_line_plot(
                    &dir.path("eps0_floor.svg"),
                    "error floor",
                    "eps0",
                    "floor",
                    &[floors],
                    log_log,
                )?;
            }
            for r in &sweep.rows {
                let (q, f) = r.fit.as_ref().map_or((f64::NAN, f64::NAN), |f| (f.q, f.floor));
                println!(
                    "eps0 {:>8}  q {q:.3e}  floor {f:.4e}  converged {}",
                    r.eps0, r.converged
                );
            }
            sweep.all_converged()
        }
    };
    let target = dir.finish()?;
    println!("artifacts in {}", target.display());
    Ok(if ok { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub fn cmd_verify(out: Option<&Path>) -> Result<u8> {
    let report = run_verification_suite(6);
    print!("{}", report.table());
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        fs::write(out.join("verify.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        fs::write(out.join("version.txt"), version_string() + "\n")?;
    }
    Ok(if report.all_passed() { EXIT_OK } else { 1 })
}

#[derive(Debug, Serialize)]
struct McComparison {
    pde: f64,
    allowance: f64,
    difference: f64,
    within: bool,
    estimate: McEstimate,
}

pub fn cmd_mc(loaded: &Loaded, flags: &CommonFlags) -> Result<u8> {
    let cfg = &loaded.config;
    let dir = ArtifactDir::create(&output_dir(loaded, flags))?;
    dir.write_echo(loaded)?;
    let problem = loaded.problem.build()?;
    let disc = cfg.discretization.build(&problem)?;
    let solver = PiaSolver::new(&problem, &disc)?;
    let state = solver.step(&ScalarField::zeros(&disc.grid), 1)?;
    let d = disc.grid.dim();
    let points: Vec<Vec<f64>> = if cfg.mc.points.is_empty() {
        let core = disc.grid.core_indices();
        (0..5)
            .map(|k| disc.grid.coord(core[k * (core.len() - 1) / 4])[..d].to_vec())
            .collect()
    } else {
        cfg.mc.points.clone()
    };
    let h2 = disc.grid.h().iter().map(|h| h * h).fold(0.0, f64::max);
    let mut rows = Vec::new();
    println!(
        "{:>24}  {:>12}  {:>12}  {:>10}  {:>10}  verdict",
        "x0", "pde", "mc", "stderr", "allowance"
    );
    for x in &points {
        let est = mc_value_averaged(
            &state.coeffs,
            problem.lambda,
            problem.rho,
            &disc.bc,
            x,
            &cfg.mc.options(),
        )?;
        let pde = ScalarField::interpolate(&state.v, x);
        let allowance = 3.0 * est.stderr + cfg.mc.allowance_constant * (h2 + est.dt + est.tail_bound);
        let difference = (pde - est.mean).abs();
        let within = est.valid && difference <= allowance;
        println!(
            "{:>24}  {pde:>12.6e}  {:>12.6e}  {:>10.3e}  {allowance:>10.3e}  {}",
            format!("{x:?}"),
            est.mean,
            est.stderr,
            if within { "ok" } else { "FAIL" }
        );
        rows.push(McComparison {
            pde,
            allowance,
            difference,
            within,
            estimate: est,
        });
    }
    let all = rows.iter().all(|r| r.within);
    dir.write_json(
        "mc.json",
        &json!({ "version": version_string(), "all_within": all, "points": rows }),
    )?;
    dir.finish()?;
    Ok(if all { EXIT_OK } else { EXIT_NOT_CONVERGED })
}
