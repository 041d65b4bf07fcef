//! `owl`: kernel-based outcome weighted learning from the command line.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use owl_cli::config::ConfigFile;
use owl_cli::experiment::{self, records_to_csv};
use owl_cli::io::{self, SavedRule, Standardizer};
use owl_core::calibration::{check_policy_calibration, closed_form_psi, psi_curve};
use owl_core::irco::{self, IrcoOptions};
use owl_core::losses::{loss_from_config, ConcaveComponent, ConcaveFamily};
use owl_core::simgen::{self, ScenarioSpec};
use owl_core::{rwl, FitOptions, KernelSpec};

#[derive(Parser)]
#[command(
    name = "owl",
    about = "Individualized treatment rules via kernel-based outcome weighted learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the risk-transform curve of a surrogate loss and a
    /// policy-calibration report.
    Psi(PsiArgs),
    /// Generate a synthetic trial dataset (with oracle sidecar).
    Generate(GenerateArgs),
    /// Fit a single rule at fixed hyperparameters.
    Fit(FitArgs),
    /// Score covariates with a saved rule.
    Score(ScoreArgs),
    /// Run a replicated experiment from a config file.
    Experiment(ExperimentArgs),
    /// Run a sample-size rate study from a config file.
    RateStudy(RateStudyArgs),
}

#[derive(Args)]
struct PsiArgs {
    /// Loss name (e.g. `hinge`, `binomial`, `cc:tcave`).
    #[arg(long)]
    loss: String,
    /// Loss parameters as `key=value` (e.g. `--param sigma_sq=1`).
    #[arg(long = "param", value_parser = parse_key_val)]
    params: Vec<(String, f64)>,
    /// Upper bound M on the conditional mean sum.
    #[arg(long, default_value_t = 1.0)]
    cap: f64,
    #[arg(long, default_value_t = 513)]
    grid_points: usize,
    /// Output CSV (v, tilde_psi, psi, closed_form_if_any).
    #[arg(long)]
    out: PathBuf,
    /// Optional calibration report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0.01)]
    margin_floor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    example: u8,
    /// Nonsmooth interaction target (scenario 1 only).
    #[arg(long)]
    nonsmooth: bool,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// Contaminate this fraction of rewards after generation.
    #[arg(long, default_value_t = 0.0)]
    contaminate: f64,
    #[arg(long, default_value_t = 1)]
    contamination_seed: u64,
    /// Flip this fraction of treatments after generation.
    #[arg(long, default_value_t = 0.0)]
    flip: f64,
    #[arg(long, default_value_t = 2)]
    flip_seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    oracle_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Training data CSV (x1..xm, a, r[, pi]).
    #[arg(long)]
    data: PathBuf,
    /// `owl` (nonnegative rewards) or `rwl` (residual path).
    #[arg(long, default_value = "rwl")]
    objective: String,
    #[arg(long)]
    loss: String,
    #[arg(long = "param", value_parser = parse_key_val)]
    params: Vec<(String, f64)>,
    /// Robustness parameter for `cc:` losses.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    kernel: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda: f64,
    /// Standardize covariates (and the outcome on the residual path) from
    /// training statistics.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    rule: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV (score, treatment).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Result table CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
    /// Per-replicate records CSV.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Include mean wall-clock runtime in the CSV (breaks byte-level
    /// reproducibility across machines).
    #[arg(long)]
    with_runtime: bool,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct RateStudyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    raw: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_key_val(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().parse::<f64>().map_err(|e| e.to_string())?))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Psi(args) => run_psi(args),
        Command::Generate(args) => run_generate(args),
        Command::Fit(args) => run_fit(args),
        Command::Score(args) => run_score(args),
        Command::Experiment(args) => run_experiment_cmd(args),
        Command::RateStudy(args) => run_rate_study_cmd(args),
    }
}

fn params_map(params: &[(String, f64)]) -> BTreeMap<String, f64> {
    params.iter().cloned().collect()
}

fn run_psi(args: PsiArgs) -> Result<()> {
    let loss = loss_from_config(&args.loss, &params_map(&args.params))?;
    let curve = psi_curve(&loss, args.cap, args.grid_points)?;
    curve.validate()?;

    let mut csv = String::from("v,tilde_psi,psi,closed_form_if_any\n");
    for i in 0..curve.grid.len() {
        let closed = closed_form_psi(&loss, curve.grid[i], args.cap)
            .map(|v| format!("{v}"))
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{}\n",
            curve.grid[i], curve.tilde_values[i], curve.convex_values[i], closed
        ));
    }
    std::fs::write(&args.out, csv).context("writing curve CSV")?;

    if let Some(report_path) = args.report {
        let report =
            check_policy_calibration(&loss, args.cap, args.samples, args.margin_floor, args.seed);
        let body = serde_json::json!({
            "calibration": report,
            "positive_definite_on_grid": curve.positive_definite_on_grid(),
            "grid_points": args.grid_points,
            "cap": args.cap,
        });
        std::fs::write(&report_path, serde_json::to_string_pretty(&body)?)?;
        if !report.passed {
            eprintln!("warning: {} failed the policy-calibration screen", loss.name());
        }
    }
    eprintln!("wrote {} grid points to {}", curve.grid.len(), args.out.display());
    Ok(())
}

fn run_generate(args: GenerateArgs) -> Result<()> {
    let m = args.m.unwrap_or(if args.example == 1 { 1 } else { 5 });
    let spec = ScenarioSpec {
        example_id: args.example,
        smooth: !args.nonsmooth,
        n: args.n,
        m,
        contamination_rate: args.contaminate,
        seed: args.seed,
    };
    let mut data = simgen::generate(&spec)?;
    if args.contaminate > 0.0 {
        data = simgen::contaminate(&data, args.contaminate, args.contamination_seed)?;
    }
    if args.flip > 0.0 {
        data = simgen::flip_treatments(&data, args.flip, args.flip_seed);
    }
    io::write_dataset_csv(&args.out, &data)?;
    if let Some(oracle_out) = args.oracle_out {
        io::write_oracle_csv(&oracle_out, &data)?;
    }
    eprintln!("wrote {} rows to {}", data.n(), args.out.display());
    Ok(())
}

fn build_kernel(name: &str, alpha: Option<f64>, rho: Option<f64>) -> Result<KernelSpec> {
    Ok(match name {
        "matern" => KernelSpec::matern(
            alpha.context("matern kernel needs --alpha")?,
            rho.context("matern kernel needs --rho")?,
        )?,
        "gaussian" => KernelSpec::gaussian(rho.context("gaussian kernel needs --rho")?)?,
        "linear" => KernelSpec::linear(),
        other => bail!("unknown kernel `{other}`"),
    })
}

fn run_fit(args: FitArgs) -> Result<()> {
    let raw = io::read_dataset_csv(&args.data, None)?;
    let standardizer = args
        .standardize
        .then(|| Standardizer::fit(&raw, args.objective == "rwl"));
    let data = match &standardizer {
        Some(s) => s.transform(&raw)?,
        None => raw,
    };
    let kernel = build_kernel(&args.kernel, args.alpha, args.rho)?;

    let mut params = params_map(&args.params);
    if let Some(sigma) = args.sigma {
        params.insert("sigma".into(), sigma);
    }

    let saved = if let Some(fam_name) = args.loss.strip_prefix("cc:") {
        let family = ConcaveFamily::parse(fam_name)
            .with_context(|| format!("unknown robust family `{}`", args.loss))?;
        let sigma = args.sigma.context("robust losses need --sigma")?;
        let g = ConcaveComponent::new(family, sigma * sigma)?;
        match args.objective.as_str() {
            "owl" => {
                let (rule, state) =
                    irco::irco_owl(&data, &g, &kernel, args.lambda, &IrcoOptions::default())?;
                eprintln!(
                    "reweighted fit: {} outer iterations, converged = {}",
                    state.iterations, state.converged
                );
                SavedRule { rule, residual_model: None, standardizer }
            }
            "rwl" => {
                let (rule, model, state) =
                    irco::irco_rwl(&data, &g, &kernel, args.lambda, &IrcoOptions::default())?;
                eprintln!(
                    "reweighted fit: {} outer iterations, converged = {}",
                    state.iterations, state.converged
                );
                SavedRule { rule, residual_model: Some(model), standardizer }
            }
            other => bail!("unknown objective `{other}`"),
        }
    } else {
        let loss = loss_from_config(&args.loss, &params)?;
        match args.objective.as_str() {
            "owl" => {
                let out = owl_core::fit::fit_convex_owl(
                    &data,
                    &loss,
                    &kernel,
                    args.lambda,
                    &FitOptions::default(),
                )?;
                eprintln!(
                    "fit: {} iterations, objective {:.6e}, converged = {}",
                    out.report.iterations, out.report.objective, out.report.converged
                );
                SavedRule { rule: out.rule, residual_model: None, standardizer }
            }
            "rwl" => {
                let out = rwl::fit_convex_rwl(
                    &data,
                    &loss,
                    &kernel,
                    args.lambda,
                    &FitOptions::default(),
                )?;
                eprintln!(
                    "fit: {} iterations, objective {:.6e}, converged = {}",
                    out.outcome.report.iterations,
                    out.outcome.report.objective,
                    out.outcome.report.converged
                );
                SavedRule {
                    rule: out.outcome.rule,
                    residual_model: Some(out.residual_model),
                    standardizer,
                }
            }
            other => bail!("unknown objective `{other}`"),
        }
    };
    saved.save(&args.out)?;
    eprintln!("saved rule to {}", args.out.display());
    Ok(())
}

fn run_score(args: ScoreArgs) -> Result<()> {
    let saved = SavedRule::load(&args.rule)?;
    let data = io::read_dataset_csv(&args.data, None)?;
    let mut out = String::from("score,treatment\n");
    for i in 0..data.n() {
        let score = saved.score(data.point(i))?;
        out.push_str(&format!("{},{}\n", score, owl_core::fit::decision_sign(score)));
    }
    std::fs::write(&args.out, out)?;
    eprintln!("scored {} rows to {}", data.n(), args.out.display());
    Ok(())
}

fn run_experiment_cmd(args: ExperimentArgs) -> Result<()> {
    let cfg = ConfigFile::load(&args.config)?;
    let plan = cfg.experiment_plan()?;
    let workers = args.workers.unwrap_or_else(default_workers);
    let out = experiment::run_experiment(&plan, workers)?;
    std::fs::write(&args.out, out.table.to_csv(args.with_runtime))?;
    if let Some(p) = args.json {
        std::fs::write(&p, out.table.to_json()?)?;
    }
    if let Some(p) = args.markdown {
        std::fs::write(&p, out.table.to_markdown())?;
    }
    if let Some(p) = args.raw {
        std::fs::write(&p, records_to_csv(&out.records))?;
    }
    eprintln!(
        "experiment `{}`: {} rows written to {}",
        plan.title,
        out.table.rows.len(),
        args.out.display()
    );
    Ok(())
}

fn run_rate_study_cmd(args: RateStudyArgs) -> Result<()> {
    let cfg = ConfigFile::load(&args.config)?;
    let plan = cfg.rate_study_plan()?;
    let workers = args.workers.unwrap_or_else(default_workers);
    let out = experiment::run_rate_study(&plan, workers)?;
    std::fs::write(&args.out, experiment::rate_rows_to_csv(&out.rows))?;
    if let Some(p) = args.raw {
        let mut csv = String::from("target,method,n,replicate,status,excess_risk\n");
        for r in &out.records {
            csv.push_str(&format!(
                "{},{},{},{},{:?},{}\n",
                r.target, r.method, r.n, r.replicate, r.status, r.excess_risk
            ));
        }
        std::fs::write(&p, csv)?;
    }
    eprintln!("rate study `{}`: {} rows to {}", plan.title, out.rows.len(), args.out.display());
    Ok(())
}
