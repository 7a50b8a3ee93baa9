//! Experiment configuration files (TOML, or JSON by extension).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use epia::mcoracle::{McOptions, MIN_PATHS};
use epia::pia::{DiscretizationSpec, StopRule};
use epia::problem::ProblemSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Inline problem definition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    /// Problem file, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_file: Option<PathBuf>,
    pub discretization: DiscretizationSpec,
    #[serde(default)]
    pub pia: PiaConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("epia-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiaConfig {
    pub max_iters: usize,
    pub delta_tol: f64,
    /// Initial value: omitted for the zero field, or a field binary.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<PathBuf>,
    /// Refinement factor of the reference grid; 0 skips the reference.
    pub reference_factor: usize,
    pub reference_max_iters: usize,
}

impl Default for PiaConfig {
    fn default() -> Self {
        let stop = StopRule::default();
        PiaConfig {
            max_iters: stop.max_iters,
            delta_tol: stop.delta_tol,
            v0: None,
            reference_factor: 2,
            reference_max_iters: 60,
        }
    }
}

impl PiaConfig {
    pub fn stop(&self) -> StopRule {
        StopRule {
            max_iters: self.max_iters,
            delta_tol: self.delta_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub alpha: f64,
    pub rho_list: Vec<f64>,
    pub eps0_list: Vec<f64>,
    /// Discount of the perturbation sweep; the problem's own when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps0_rho: Option<f64>,
    /// Iterations recorded per row of the perturbation sweep.
    pub floor_iters: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            alpha: 0.5,
            rho_list: Vec::new(),
            eps0_list: Vec::new(),
            eps0_rho: None,
            floor_iters: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub npaths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub seed: u64,
    /// Start points; five evenly spaced core nodes when empty.
    pub points: Vec<Vec<f64>>,
    /// `C` in the allowance `C·(h² + dt + tail)`.
    pub allowance_constant: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        let o = McOptions::default();
        McConfig {
            npaths: o.npaths,
            dt: o.dt,
            horizon: o.horizon,
            seed: o.seed,
            points: Vec::new(),
            allowance_constant: 1.0,
        }
    }
}

impl McConfig {
    pub fn options(&self) -> McOptions {
        McOptions {
            npaths: self.npaths,
            horizon: self.horizon,
            dt: self.dt,
            seed: self.seed,
        }
    }
}

/// Loaded configuration with file references resolved.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub problem: ProblemSpec,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The configuration with every default written out and the problem inlined.
    pub fn echo(&self) -> ExperimentConfig {
        let mut c = self.config.clone();
        c.problem = Some(self.problem.clone());
        c.problem_file = None;
        c
    }
}

pub fn parse_config(text: &str, json: bool) -> Result<ExperimentConfig> {
    if json {
        serde_json::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))
    } else {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))
    }
}

pub fn load(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let json = path.extension().is_some_and(|e| e == "json");
    let config = parse_config(&text, json).with_context(|| format!("malformed config {}", path.display()))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let problem = match (&config.problem, &config.problem_file) {
        (Some(p), None) => p.clone(),
        (None, Some(f)) => {
            let full = if f.is_absolute() { f.clone() } else { base_dir.join(f) };
            ProblemSpec::from_path(&full)?
        }
        (Some(_), Some(_)) => bail!("give either [problem] or problem_file, not both"),
        (None, None) => bail!("config needs a [problem] table or problem_file"),
    };
    let loaded = Loaded {
        config,
        problem,
        base_dir,
    };
    if let Some(v0) = &loaded.config.pia.v0 {
        let full = loaded.resolve(v0);
        if !full.is_file() {
            bail!("initial value file {} does not exist", full.display());
        }
    }
    if loaded.config.mc.npaths < MIN_PATHS {
        bail!(
            "mc.npaths = {} is below the minimum of {MIN_PATHS}",
            loaded.config.mc.npaths
        );
    }
    Ok(loaded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_explicit_in_echo() {
        let c = parse_config(
            r#"
            [problem]
            family = "bounded-trig"
            [discretization]
            bounds = [[-3.0, 3.0]]
            n = [33]
            "#,
            false,
        )
        .unwrap();
        let text = toml::to_string(&c).unwrap();
        for key in [
            "max_iters",
            "delta_tol",
            "alpha",
            "npaths",
            "core_fraction",
            "action_nodes",
            "boundary",
        ] {
            assert!(text.contains(key), "{key} missing from\n{text}");
        }
        assert_eq!(parse_config(&text, false).unwrap(), c);
    }

    #[test]
    fn malformed_reports_position() {
        let err = parse_config("[discretization]\nbounds = [[-1.0, 1.0]\n", false).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
