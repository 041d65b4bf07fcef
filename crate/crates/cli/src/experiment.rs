//! Replicated experiment runner and the sample-size rate study.
//!
//! Per replicate: draw train/tune/test sets with seeds derived from
//! `(master_seed, replicate)`, contaminate train and tune only, grid-search
//! every method on the shared datasets (paired comparisons), and score the
//! selected rule on the untouched test set. Failures and timeouts mark the
//! affected cell instead of aborting the run.
//!
//! Everything downstream of the master seed is deterministic: replicates
//! map over an order-preserving parallel iterator, aggregation is
//! sequential in replicate order, and wall-clock measurements never enter
//! the table of record.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use owl_core::evaluate::{self, EvalError};
use owl_core::parallel;
use owl_core::seeding::derive;
use owl_core::simgen::{self, SimError};
use owl_core::TrialDataset;

use crate::config::{ExperimentPlan, RateStudyPlan, ResolvedMethod};
use crate::table::{mean_sd, ResultRow, ResultTable};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Seed stream tags for the runner. Keep these stable: changing them
/// changes every derived dataset.
mod tag {
    pub const TRAIN: u64 = 11;
    pub const TUNE: u64 = 12;
    pub const TEST: u64 = 13;
    pub const CONTAMINATE_TRAIN: u64 = 14;
    pub const CONTAMINATE_TUNE: u64 = 15;
    pub const RATE_TRAIN: u64 = 21;
    pub const RATE_TUNE: u64 = 22;
    pub const RATE_TEST: u64 = 23;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    TimedOut,
    Failed(String),
}

impl CellStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, CellStatus::Ok)
    }

    fn label(&self) -> String {
        match self {
            CellStatus::Ok => "ok".into(),
            CellStatus::TimedOut => "timeout".into(),
            CellStatus::Failed(m) => format!("failed: {m}"),
        }
    }
}

/// One (replicate, contamination, method) evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub contamination: f64,
    pub method: String,
    pub status: CellStatus,
    pub value: f64,
    pub misclassification: f64,
    pub excess_risk: f64,
    pub best_lambda: Option<f64>,
    pub best_bandwidth: Option<f64>,
    pub best_sigma: Option<f64>,
    #[serde(skip)]
    pub runtime_s: f64,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub records: Vec<ReplicateRecord>,
}

/// Raw per-replicate CSV (deterministic; no wall-clock columns).
pub fn records_to_csv(records: &[ReplicateRecord]) -> String {
    let mut out = String::from(
        "replicate,contamination,method,status,value,misclassification,excess_risk,best_lambda,best_bandwidth,best_sigma\n",
    );
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v}"));
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.replicate,
            r.contamination,
            r.method,
            r.status.label().replace(',', ";"),
            r.value,
            r.misclassification,
            r.excess_risk,
            opt(r.best_lambda),
            opt(r.best_bandwidth),
            opt(r.best_sigma),
        ));
    }
    out
}

/// Run inside a pool of `workers` threads when the crate is built with the
/// `parallel` feature; sequentially otherwise.
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| RunError::Pool(e.to_string()))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        Ok(f())
    }
}

fn evaluate_method(
    method: &ResolvedMethod,
    train: &TrialDataset,
    tune: &TrialDataset,
    test: &TrialDataset,
    deadline: Option<Instant>,
    replicate: u64,
    contamination: f64,
) -> ReplicateRecord {
    // Contamination never reaches the test set.
    assert!(
        test.contaminated_rows().is_empty(),
        "test-set isolation violated at replicate {replicate}"
    );
    let started = Instant::now();
    let mut record = ReplicateRecord {
        replicate,
        contamination,
        method: method.name().to_string(),
        status: CellStatus::Ok,
        value: f64::NAN,
        misclassification: f64::NAN,
        excess_risk: f64::NAN,
        best_lambda: None,
        best_bandwidth: None,
        best_sigma: None,
        runtime_s: 0.0,
    };
    match method {
        ResolvedMethod::Oracle { .. } => {
            let oracle = test.oracle().expect("synthetic test sets carry oracles");
            let assignments = oracle.dstar.clone();
            record.value = evaluate::value_estimate_of(&assignments, test).unwrap_or(f64::NAN);
            record.misclassification = 0.0;
            record.excess_risk = 0.0;
        }
        ResolvedMethod::Kernel { spec, grid } => {
            match evaluate::grid_search(train, tune, spec, grid, deadline) {
                Ok(out) => {
                    let assignments = match out.rule.assign_batch(test.covariates()) {
                        Ok(a) => a,
                        Err(e) => {
                            record.status = CellStatus::Failed(e.to_string());
                            record.runtime_s = started.elapsed().as_secs_f64();
                            return record;
                        }
                    };
                    record.value =
                        evaluate::value_estimate_of(&assignments, test).unwrap_or(f64::NAN);
                    record.misclassification =
                        evaluate::misclassification_of(&assignments, test).unwrap_or(f64::NAN);
                    record.excess_risk =
                        evaluate::empirical_excess_risk_of(&assignments, test).unwrap_or(f64::NAN);
                    record.best_lambda = Some(out.best.lambda);
                    record.best_bandwidth = Some(out.best.bandwidth);
                    record.best_sigma = out.best.sigma;
                }
                Err(EvalError::TimedOut { .. }) => record.status = CellStatus::TimedOut,
                Err(e) => record.status = CellStatus::Failed(e.to_string()),
            }
        }
    }
    record.runtime_s = started.elapsed().as_secs_f64();
    record
}

fn run_replicate(plan: &ExperimentPlan, replicate: u64) -> Result<Vec<ReplicateRecord>, RunError> {
    let base = derive(plan.master_seed, replicate);
    let n = plan.scenario.n;
    let train0 = simgen::generate(&plan.scenario.spec(n, derive(base, tag::TRAIN)))?;
    let tune0 = simgen::generate(&plan.scenario.spec(n, derive(base, tag::TUNE)))?;
    let test = simgen::generate(&plan.scenario.spec(plan.n_test, derive(base, tag::TEST)))?;

    let mut records = Vec::new();
    for &rate in &plan.contaminations {
        let (train, tune) = if rate > 0.0 {
            (
                simgen::contaminate(&train0, rate, derive(base, tag::CONTAMINATE_TRAIN))?,
                simgen::contaminate(&tune0, rate, derive(base, tag::CONTAMINATE_TUNE))?,
            )
        } else {
            (train0.clone(), tune0.clone())
        };
        for method in &plan.methods {
            let deadline = plan.cell_timeout.map(|d| Instant::now() + d);
            records.push(evaluate_method(
                method, &train, &tune, &test, deadline, replicate, rate,
            ));
        }
    }
    Ok(records)
}

/// Run every replicate and aggregate the table of record.
pub fn run_experiment(plan: &ExperimentPlan, workers: usize) -> Result<ExperimentOutput, RunError> {
    let per_replicate: Vec<Result<Vec<ReplicateRecord>, RunError>> = with_pool(workers, || {
        parallel::map_range(plan.replicates as usize, |r| run_replicate(plan, r as u64))
    })?;
    let mut records = Vec::new();
    for r in per_replicate {
        records.extend(r?);
    }

    let scenario_label = plan.scenario.label();
    let mut rows = Vec::new();
    for &rate in &plan.contaminations {
        for method in &plan.methods {
            let cell: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.method == method.name() && r.contamination == rate)
                .collect();
            let ok: Vec<&&ReplicateRecord> = cell.iter().filter(|r| r.status.is_ok()).collect();
            let values: Vec<f64> = ok.iter().map(|r| r.value).collect();
            let errors: Vec<f64> = ok.iter().map(|r| r.misclassification).collect();
            let runtimes: Vec<f64> = ok.iter().map(|r| r.runtime_s).collect();
            let (mean_value, sd_value) = mean_sd(&values);
            let (mean_error, sd_error) = mean_sd(&errors);
            let (mean_runtime, _) = mean_sd(&runtimes);
            rows.push(ResultRow {
                method: method.name().to_string(),
                scenario: scenario_label.clone(),
                contamination: rate,
                replicates: plan.replicates,
                n_complete: ok.len() as u64,
                mean_value,
                sd_value,
                mean_error,
                sd_error,
                mean_runtime_s: if ok.is_empty() { None } else { Some(mean_runtime) },
            });
        }
    }
    Ok(ExperimentOutput { table: ResultTable { rows }, records })
}

// ---------------------------------------------------------------------------
// Rate study
// ---------------------------------------------------------------------------

/// Aggregated excess risk for one (target, method, n) cell.
#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub target: String,
    pub method: String,
    pub n: usize,
    pub replicates: u64,
    pub n_complete: u64,
    pub mean_excess_risk: f64,
    pub sd_excess_risk: f64,
}

#[derive(Debug)]
pub struct RateStudyOutput {
    pub rows: Vec<RateRow>,
    pub records: Vec<RateRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRecord {
    pub target: String,
    pub method: String,
    pub n: usize,
    pub replicate: u64,
    pub status: CellStatus,
    pub excess_risk: f64,
}

/// Plot-ready CSV: `log2(n)` and the log excess risk alongside the raw
/// aggregates.
pub fn rate_rows_to_csv(rows: &[RateRow]) -> String {
    let mut out = String::from(
        "target,method,n,log2_n,replicates,n_complete,mean_excess_risk,sd_excess_risk,ln_mean_excess_risk\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.target,
            r.method,
            r.n,
            (r.n as f64).log2(),
            r.replicates,
            r.n_complete,
            r.mean_excess_risk,
            r.sd_excess_risk,
            r.mean_excess_risk.ln(),
        ));
    }
    out
}

fn target_name(smooth: bool) -> &'static str {
    if smooth {
        "smooth"
    } else {
        "nonsmooth"
    }
}

/// Excess-risk trend over sample sizes. Replicate `r` shares its seeds
/// across every `n` (training sets are nested by construction), so the
/// curves are paired in `n`.
pub fn run_rate_study(plan: &RateStudyPlan, workers: usize) -> Result<RateStudyOutput, RunError> {
    struct Task {
        smooth: bool,
        n: usize,
        replicate: u64,
    }
    let mut tasks = Vec::new();
    for &smooth in &plan.targets {
        for &n in &plan.n_list {
            for r in 0..plan.replicates {
                tasks.push(Task { smooth, n, replicate: r });
            }
        }
    }

    let run_task = |t: &Task| -> Result<Vec<RateRecord>, RunError> {
        let shape = crate::config::ScenarioShape {
            example_id: plan.example_id,
            smooth: t.smooth,
            n: t.n,
            m: plan.m,
        };
        let base = derive(plan.master_seed, t.replicate);
        let train = simgen::generate(&shape.spec(t.n, derive(base, tag::RATE_TRAIN)))?;
        let tune = simgen::generate(&shape.spec(plan.n_tune, derive(base, tag::RATE_TUNE)))?;
        let test = simgen::generate(&shape.spec(plan.n_test, derive(base, tag::RATE_TEST)))?;
        let mut out = Vec::new();
        for method in &plan.methods {
            let ResolvedMethod::Kernel { spec, grid } = method else {
                continue;
            };
            let mut record = RateRecord {
                target: target_name(t.smooth).into(),
                method: method.name().to_string(),
                n: t.n,
                replicate: t.replicate,
                status: CellStatus::Ok,
                excess_risk: f64::NAN,
            };
            match evaluate::grid_search(&train, &tune, spec, grid, None) {
                Ok(fit) => match evaluate::empirical_excess_risk(&fit.rule, &test) {
                    Ok(risk) => record.excess_risk = risk,
                    Err(e) => record.status = CellStatus::Failed(e.to_string()),
                },
                Err(e) => record.status = CellStatus::Failed(e.to_string()),
            }
            out.push(record);
        }
        Ok(out)
    };

    let per_task: Vec<Result<Vec<RateRecord>, RunError>> =
        with_pool(workers, || parallel::map(&tasks, run_task))?;
    let mut records = Vec::new();
    for r in per_task {
        records.extend(r?);
    }

    let mut rows = Vec::new();
    for &smooth in &plan.targets {
        for method in &plan.methods {
            for &n in &plan.n_list {
                let risks: Vec<f64> = records
                    .iter()
                    .filter(|r| {
                        r.target == target_name(smooth)
                            && r.method == method.name()
                            && r.n == n
                            && r.status.is_ok()
                    })
                    .map(|r| r.excess_risk)
                    .collect();
                let (mean, sd) = mean_sd(&risks);
                rows.push(RateRow {
                    target: target_name(smooth).into(),
                    method: method.name().to_string(),
                    n,
                    replicates: plan.replicates,
                    n_complete: risks.len() as u64,
                    mean_excess_risk: mean,
                    sd_excess_risk: sd,
                });
            }
        }
    }
    Ok(RateStudyOutput { rows, records })
}
