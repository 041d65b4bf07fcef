//! Declarative experiment configuration (TOML).
//!
//! A config names a scenario, a list of methods, and the replication
//! protocol; grids default to the standard tuning ranges
//! (`lambda = 10^k, k = -3..3`; `bandwidth = 10^k, k = -1, -0.75, ..., 1`)
//! unless overridden globally in `[grids]` or per method.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use owl_core::evaluate::{
    log10_grid, KernelFamily, LossFamily, MethodSpec, ObjectivePath, TuneCriterion, TuningGrid,
};
use owl_core::losses;
use owl_core::simgen::ScenarioSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Loss(#[from] losses::LossError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub example: u8,
    #[serde(default = "default_true")]
    pub smooth: bool,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub replicates: u64,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    pub master_seed: u64,
    #[serde(default = "default_contamination")]
    pub contamination: Vec<f64>,
    /// Wall-clock cap per (replicate, method) fit; `0` disables the cap.
    #[serde(default = "default_timeout")]
    pub cell_timeout_s: f64,
}

fn default_n_test() -> usize {
    10_000
}

fn default_contamination() -> Vec<f64> {
    vec![0.0]
}

fn default_timeout() -> f64 {
    120.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateStudySection {
    pub n_list: Vec<usize>,
    pub replicates: u64,
    #[serde(default = "default_n_test")]
    pub n_tune: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    pub master_seed: u64,
    #[serde(default = "default_targets")]
    pub targets: Vec<String>,
}

fn default_targets() -> Vec<String> {
    vec!["smooth".into(), "nonsmooth".into()]
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub bandwidths: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_log10: Option<LogRange>,
    #[serde(default)]
    pub bandwidth_log10: Option<LogRange>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRange {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub name: String,
    /// `kernel` (default) or `oracle`.
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub objective: Option<String>,
    #[serde(default)]
    pub loss: Option<String>,
    #[serde(default)]
    pub params: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub sigmas: Option<Vec<f64>>,
    #[serde(default)]
    pub kernel: Option<String>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub bandwidths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub title: Option<String>,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub experiment: Option<ExperimentSection>,
    #[serde(default)]
    pub rate_study: Option<RateStudySection>,
    #[serde(default)]
    pub grids: GridSection,
    #[serde(default)]
    pub methods: Vec<MethodSection>,
}

/// A method ready to run: either a kernel method with its grid, or the
/// oracle rule read directly off the test set.
#[derive(Debug, Clone)]
pub enum ResolvedMethod {
    Kernel { spec: MethodSpec, grid: TuningGrid },
    Oracle { name: String },
}

impl ResolvedMethod {
    pub fn name(&self) -> &str {
        match self {
            ResolvedMethod::Kernel { spec, .. } => &spec.name,
            ResolvedMethod::Oracle { name } => name,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub title: String,
    pub scenario: ScenarioShape,
    pub methods: Vec<ResolvedMethod>,
    pub replicates: u64,
    pub n_test: usize,
    pub master_seed: u64,
    pub contaminations: Vec<f64>,
    pub cell_timeout: Option<Duration>,
}

#[derive(Debug, Clone)]
pub struct RateStudyPlan {
    pub title: String,
    pub example_id: u8,
    pub m: usize,
    pub n_list: Vec<usize>,
    pub targets: Vec<bool>, // smooth flags
    pub methods: Vec<ResolvedMethod>,
    pub replicates: u64,
    pub n_tune: usize,
    pub n_test: usize,
    pub master_seed: u64,
}

/// Scenario dimensions shared by all replicates; seeds are derived per
/// replicate by the runner.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioShape {
    pub example_id: u8,
    pub smooth: bool,
    pub n: usize,
    pub m: usize,
}

impl ScenarioShape {
    pub fn spec(&self, n: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            example_id: self.example_id,
            smooth: self.smooth,
            n,
            m: self.m,
            contamination_rate: 0.0,
            seed,
        }
    }

    pub fn label(&self) -> String {
        format!("example{}-n{}-m{}", self.example_id, self.n, self.m)
    }
}

pub fn default_lambda_grid() -> Vec<f64> {
    log10_grid(-3.0, 3.0, 1.0)
}

pub fn default_bandwidth_grid() -> Vec<f64> {
    log10_grid(-1.0, 1.0, 0.25)
}

fn resolve_grid(
    global: &GridSection,
    method: &MethodSection,
) -> Result<(Vec<f64>, Vec<f64>), ConfigError> {
    let lambdas = method
        .lambdas
        .clone()
        .or_else(|| global.lambdas.clone())
        .or_else(|| global.lambda_log10.as_ref().map(|r| log10_grid(r.from, r.to, r.step)))
        .unwrap_or_else(default_lambda_grid);
    let bandwidths = method
        .bandwidths
        .clone()
        .or_else(|| global.bandwidths.clone())
        .or_else(|| global.bandwidth_log10.as_ref().map(|r| log10_grid(r.from, r.to, r.step)))
        .unwrap_or_else(default_bandwidth_grid);
    Ok((lambdas, bandwidths))
}

fn resolve_method(
    section: &MethodSection,
    global_grids: &GridSection,
    criterion: TuneCriterion,
) -> Result<ResolvedMethod, ConfigError> {
    match section.kind.as_deref() {
        Some("oracle") => return Ok(ResolvedMethod::Oracle { name: section.name.clone() }),
        Some("kernel") | None => {}
        Some(other) => {
            return Err(ConfigError::Invalid(format!(
                "method `{}`: unknown kind `{other}`",
                section.name
            )))
        }
    }

    let loss_name = section.loss.as_deref().ok_or_else(|| {
        ConfigError::Invalid(format!("method `{}` is missing `loss`", section.name))
    })?;
    let params = section.params.clone().unwrap_or_default();
    let loss = if let Some(fam_name) = loss_name.strip_prefix("cc:") {
        let family = owl_core::losses::ConcaveFamily::parse(fam_name).ok_or_else(|| {
            ConfigError::Invalid(format!("unknown robust family `{loss_name}`"))
        })?;
        if section.sigmas.as_ref().is_none_or(|s| s.is_empty()) {
            return Err(ConfigError::Invalid(format!(
                "robust method `{}` needs a nonempty `sigmas` list",
                section.name
            )));
        }
        LossFamily::RobustCc(family)
    } else {
        LossFamily::Convex(losses::loss_from_config(loss_name, &params)?)
    };

    let kernel = match section.kernel.as_deref() {
        Some("matern") => {
            let alpha = section.alpha.ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "method `{}`: matern kernel needs `alpha`",
                    section.name
                ))
            })?;
            KernelFamily::Matern { alpha }
        }
        Some("gaussian") => KernelFamily::Gaussian,
        Some("linear") => KernelFamily::Linear,
        Some(other) => {
            return Err(ConfigError::Invalid(format!(
                "method `{}`: unknown kernel `{other}`",
                section.name
            )))
        }
        None => {
            return Err(ConfigError::Invalid(format!(
                "method `{}` is missing `kernel`",
                section.name
            )))
        }
    };

    let objective = match section.objective.as_deref() {
        Some("owl") => ObjectivePath::Owl,
        Some("rwl") | None => ObjectivePath::Rwl,
        Some(other) => {
            return Err(ConfigError::Invalid(format!(
                "method `{}`: unknown objective `{other}`",
                section.name
            )))
        }
    };

    let (lambdas, bandwidths) = resolve_grid(global_grids, section)?;
    let mut sigmas = section.sigmas.clone();
    if let Some(s) = sigmas.as_mut() {
        s.sort_by(|a, b| b.total_cmp(a));
    }
    Ok(ResolvedMethod::Kernel {
        spec: MethodSpec {
            name: section.name.clone(),
            objective,
            loss,
            kernel,
            criterion,
        },
        grid: TuningGrid { lambdas, bandwidths, sigmas },
    })
}

fn check_unique_names(methods: &[ResolvedMethod]) -> Result<(), ConfigError> {
    let mut seen = std::collections::BTreeSet::new();
    for m in methods {
        if !seen.insert(m.name().to_string()) {
            return Err(ConfigError::Invalid(format!("duplicate method name `{}`", m.name())));
        }
    }
    Ok(())
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn experiment_plan(&self) -> Result<ExperimentPlan, ConfigError> {
        let exp = self
            .experiment
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("missing [experiment] section".into()))?;
        if exp.replicates == 0 {
            return Err(ConfigError::Invalid("replicates must be >= 1".into()));
        }
        let n = self
            .scenario
            .n
            .ok_or_else(|| ConfigError::Invalid("scenario needs `n`".into()))?;
        let m = self.scenario.m.unwrap_or(if self.scenario.example == 1 { 1 } else { 5 });
        let scenario = ScenarioShape {
            example_id: self.scenario.example,
            smooth: self.scenario.smooth,
            n,
            m,
        };
        scenario
            .spec(n, 0)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.methods.is_empty() {
            return Err(ConfigError::Invalid("no [[methods]] given".into()));
        }
        let methods = self
            .methods
            .iter()
            .map(|m| resolve_method(m, &self.grids, TuneCriterion::MaximizeValue))
            .collect::<Result<Vec<_>, _>>()?;
        check_unique_names(&methods)?;
        for rate in &exp.contamination {
            if !(0.0..1.0).contains(rate) {
                return Err(ConfigError::Invalid(format!("contamination rate {rate}")));
            }
        }
        Ok(ExperimentPlan {
            title: self.title.clone().unwrap_or_else(|| scenario.label()),
            scenario,
            methods,
            replicates: exp.replicates,
            n_test: exp.n_test,
            master_seed: exp.master_seed,
            contaminations: exp.contamination.clone(),
            cell_timeout: (exp.cell_timeout_s > 0.0)
                .then(|| Duration::from_secs_f64(exp.cell_timeout_s)),
        })
    }

    pub fn rate_study_plan(&self) -> Result<RateStudyPlan, ConfigError> {
        let rs = self
            .rate_study
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("missing [rate_study] section".into()))?;
        if self.scenario.example != 1 {
            return Err(ConfigError::Invalid(
                "rate studies are defined for scenario 1".into(),
            ));
        }
        if rs.n_list.is_empty() || rs.replicates == 0 {
            return Err(ConfigError::Invalid("rate study needs n_list and replicates".into()));
        }
        let targets = rs
            .targets
            .iter()
            .map(|t| match t.as_str() {
                "smooth" => Ok(true),
                "nonsmooth" => Ok(false),
                other => Err(ConfigError::Invalid(format!("unknown target `{other}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let methods = self
            .methods
            .iter()
            .map(|m| resolve_method(m, &self.grids, TuneCriterion::MinimizeExcessRisk))
            .collect::<Result<Vec<_>, _>>()?;
        check_unique_names(&methods)?;
        if methods.iter().any(|m| matches!(m, ResolvedMethod::Oracle { .. })) {
            return Err(ConfigError::Invalid(
                "the oracle method has zero excess risk by definition; drop it from rate studies"
                    .into(),
            ));
        }
        Ok(RateStudyPlan {
            title: self.title.clone().unwrap_or_else(|| "rate-study".into()),
            example_id: 1,
            m: self.scenario.m.unwrap_or(1),
            n_list: rs.n_list.clone(),
            targets,
            methods,
            replicates: rs.replicates,
            n_tune: rs.n_tune,
            n_test: rs.n_test,
            master_seed: rs.master_seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
title = "demo"

[scenario]
example = 2
n = 100
m = 50

[experiment]
replicates = 4
n_test = 1000
master_seed = 7
contamination = [0.0, 0.05]

[[methods]]
name = "Exponential"
objective = "rwl"
loss = "binomial"
kernel = "matern"
alpha = 0.5

[[methods]]
name = "Exponential-Robust"
objective = "rwl"
loss = "cc:tcave"
sigmas = [2.0]
kernel = "matern"
alpha = 0.5

[[methods]]
name = "Oracle"
kind = "oracle"
"#;

    #[test]
    fn parses_and_resolves_the_demo_config() {
        let cfg = ConfigFile::parse(EXAMPLE).unwrap();
        let plan = cfg.experiment_plan().unwrap();
        assert_eq!(plan.methods.len(), 3);
        assert_eq!(plan.contaminations, vec![0.0, 0.05]);
        match &plan.methods[0] {
            ResolvedMethod::Kernel { grid, .. } => {
                assert_eq!(grid.lambdas.len(), 7);
                assert_eq!(grid.bandwidths.len(), 9);
                assert!(grid.sigmas.is_none());
            }
            _ => panic!("expected kernel method"),
        }
        match &plan.methods[1] {
            ResolvedMethod::Kernel { grid, .. } => {
                assert_eq!(grid.sigmas.as_deref(), Some(&[2.0][..]))
            }
            _ => panic!("expected kernel method"),
        }
        assert!(matches!(&plan.methods[2], ResolvedMethod::Oracle { .. }));
    }

    #[test]
    fn duplicate_names_rejected() {
        let bad = EXAMPLE.replace("Exponential-Robust", "Exponential");
        let cfg = ConfigFile::parse(&bad).unwrap();
        assert!(cfg.experiment_plan().is_err());
    }

    #[test]
    fn robust_method_requires_sigmas() {
        let bad = EXAMPLE.replace("sigmas = [2.0]\n", "");
        let cfg = ConfigFile::parse(&bad).unwrap();
        assert!(cfg.experiment_plan().is_err());
    }

    #[test]
    fn rate_study_plan_resolves() {
        let text = r#"
[scenario]
example = 1
m = 1

[rate_study]
n_list = [64, 128]
replicates = 3
master_seed = 5
n_tune = 500
n_test = 500

[[methods]]
name = "gauss-binomial"
objective = "owl"
loss = "binomial"
kernel = "gaussian"
"#;
        let cfg = ConfigFile::parse(text).unwrap();
        let plan = cfg.rate_study_plan().unwrap();
        assert_eq!(plan.n_list, vec![64, 128]);
        assert_eq!(plan.targets, vec![true, false]);
        match &plan.methods[0] {
            ResolvedMethod::Kernel { spec, .. } => {
                assert!(matches!(spec.criterion, TuneCriterion::MinimizeExcessRisk));
            }
            _ => panic!(),
        }
    }
}
