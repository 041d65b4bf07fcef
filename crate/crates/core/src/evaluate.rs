//! Decision-rule metrics and hyperparameter tuning.
//!
//! Metrics: misclassification against the oracle rule, the self-normalized
//! value estimator (with `pi = 1/2` it reduces to the mean reward over
//! matched rows), and the empirical excess 0–1 risk, which weights each
//! oracle disagreement by the conditional-mean gap.
//!
//! Tuning is a grid search over `(lambda, bandwidth)` and, for the robust
//! losses, a descending sigma chain fitted with warm starts: each sigma
//! starts from the previous solution, and the chain stops early once the
//! tuning criterion degrades twice in a row. Ties break toward larger
//! sigma, then larger lambda, then smaller bandwidth, so results do not
//! depend on traversal details.

use std::time::Instant;

use thiserror::Error;

use crate::data::{DataError, TrialDataset};
use crate::fit::{self, FitError, FitOptions, FittedRule};
use crate::irco::{self, IrcoError, IrcoOptions};
use crate::kernels::{self, KernelError, KernelSpec};
use crate::losses::{ConcaveComponent, ConcaveFamily, LossError, LossSpec};
use crate::rwl::{self, ResidualModel, RwlError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("no test row matches its assigned treatment; the value estimate is undefined")]
    NoMatchedRows,
    #[error("assignment vector has length {got}, expected {expected}")]
    AssignmentLength { got: usize, expected: usize },
    #[error("invalid tuning grid: {0}")]
    InvalidGrid(String),
    #[error("train has {train} covariates, tune has {tune}")]
    SchemaMismatch { train: usize, tune: usize },
    #[error("grid search timed out after {evaluated} of {total} cells")]
    TimedOut { evaluated: usize, total: usize },
    #[error("every grid cell failed; diagnostics: {0:?}")]
    AllCellsFailed(Vec<String>),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Rwl(#[from] RwlError),
    #[error(transparent)]
    Irco(#[from] IrcoError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Headline metrics of a rule on a test set with oracle columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub value_estimate: f64,
    pub misclassification: f64,
    pub n_matched: usize,
}

fn check_assignments(assignments: &[f64], test: &TrialDataset) -> Result<(), EvalError> {
    if test.n() == 0 {
        return Err(EvalError::EmptyTestSet);
    }
    if assignments.len() != test.n() {
        return Err(EvalError::AssignmentLength { got: assignments.len(), expected: test.n() });
    }
    Ok(())
}

/// Misclassification rate of precomputed assignments against the oracle.
pub fn misclassification_of(assignments: &[f64], test: &TrialDataset) -> Result<f64, EvalError> {
    check_assignments(assignments, test)?;
    let oracle = test.require_oracle()?;
    let wrong = assignments.iter().zip(&oracle.dstar).filter(|(a, d)| a != d).count();
    Ok(wrong as f64 / test.n() as f64)
}

/// Misclassification rate of a fitted rule against the oracle.
pub fn misclassification(rule: &FittedRule, test: &TrialDataset) -> Result<f64, EvalError> {
    let assignments = rule.assign_batch(test.covariates())?;
    misclassification_of(&assignments, test)
}

/// Self-normalized value of precomputed assignments:
/// `sum_matched(r/pi) / sum_matched(1/pi)`.
pub fn value_estimate_of(assignments: &[f64], test: &TrialDataset) -> Result<f64, EvalError> {
    check_assignments(assignments, test)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..test.n() {
        if test.treatments()[i] == assignments[i] {
            num += test.rewards()[i] / test.propensities()[i];
            den += 1.0 / test.propensities()[i];
        }
    }
    if den == 0.0 {
        return Err(EvalError::NoMatchedRows);
    }
    Ok(num / den)
}

/// Self-normalized value of a fitted rule.
pub fn value_estimate(rule: &FittedRule, test: &TrialDataset) -> Result<f64, EvalError> {
    let assignments = rule.assign_batch(test.covariates())?;
    value_estimate_of(&assignments, test)
}

/// Empirical excess 0–1 risk: the oracle-disagreement average of the
/// conditional-mean gap.
pub fn empirical_excess_risk_of(
    assignments: &[f64],
    test: &TrialDataset,
) -> Result<f64, EvalError> {
    check_assignments(assignments, test)?;
    let oracle = test.require_oracle()?;
    let mut total = 0.0;
    for i in 0..test.n() {
        if assignments[i] != oracle.dstar[i] {
            total += oracle.mu_gap[i];
        }
    }
    Ok(total / test.n() as f64)
}

/// Empirical excess 0–1 risk of a fitted rule.
pub fn empirical_excess_risk(rule: &FittedRule, test: &TrialDataset) -> Result<f64, EvalError> {
    let assignments = rule.assign_batch(test.covariates())?;
    empirical_excess_risk_of(&assignments, test)
}

/// Value, misclassification, and match count in one pass.
pub fn metric_report(rule: &FittedRule, test: &TrialDataset) -> Result<MetricReport, EvalError> {
    let assignments = rule.assign_batch(test.covariates())?;
    let n_matched = assignments
        .iter()
        .zip(test.treatments())
        .filter(|(a, t)| a == t)
        .count();
    Ok(MetricReport {
        value_estimate: value_estimate_of(&assignments, test)?,
        misclassification: misclassification_of(&assignments, test)?,
        n_matched,
    })
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// `10^k` for `k = start, start + step, ..., end` (inclusive).
pub fn log10_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = start;
    while k <= end + 1e-9 {
        out.push(10f64.powf(k));
        k += step;
    }
    out
}

/// Hyperparameter grid. `sigmas` (robust losses only) must be strictly
/// descending: robustness tuning proceeds from mild to aggressive.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub lambdas: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub sigmas: Option<Vec<f64>>,
}

impl TuningGrid {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.lambdas.is_empty() || self.bandwidths.is_empty() {
            return Err(EvalError::InvalidGrid("empty lambda or bandwidth grid".into()));
        }
        if self.lambdas.iter().chain(&self.bandwidths).any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(EvalError::InvalidGrid("grid values must be positive".into()));
        }
        if let Some(sigmas) = &self.sigmas {
            if sigmas.is_empty() {
                return Err(EvalError::InvalidGrid("empty sigma grid".into()));
            }
            if sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(EvalError::InvalidGrid("sigmas must be positive".into()));
            }
            if sigmas.windows(2).any(|w| w[1] >= w[0]) {
                return Err(EvalError::InvalidGrid("sigmas must be strictly descending".into()));
            }
        }
        Ok(())
    }
}

/// Which representer objective a method minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectivePath {
    /// Outcome-weighted: rewards must be nonnegative.
    Owl,
    /// Residual-weighted: fits a linear outcome model first.
    Rwl,
}

/// The surrogate a method minimizes: a convex catalog loss, or the robust
/// concave–convex family with sigma taken from the grid.
#[derive(Debug, Clone)]
pub enum LossFamily {
    Convex(LossSpec),
    RobustCc(ConcaveFamily),
}

/// Kernel family; the bandwidth comes from the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    Matern { alpha: f64 },
    Gaussian,
    Linear,
}

impl KernelFamily {
    pub fn with_bandwidth(&self, rho: f64) -> Result<KernelSpec, KernelError> {
        match *self {
            KernelFamily::Matern { alpha } => KernelSpec::matern(alpha, rho),
            KernelFamily::Gaussian => KernelSpec::gaussian(rho),
            KernelFamily::Linear => Ok(KernelSpec::linear()),
        }
    }
}

/// Model selection target on the tuning set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneCriterion {
    MaximizeValue,
    MinimizeExcessRisk,
}

/// A fully specified estimation method.
#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub name: String,
    pub objective: ObjectivePath,
    pub loss: LossFamily,
    pub kernel: KernelFamily,
    pub criterion: TuneCriterion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCell {
    pub lambda: f64,
    pub bandwidth: f64,
    pub sigma: Option<f64>,
    /// Criterion value on the tuning set (value, or excess risk).
    pub tune_score: f64,
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub rule: FittedRule,
    pub residual_model: Option<ResidualModel>,
    pub best: BestCell,
    pub cells_evaluated: usize,
}

struct Candidate {
    rule: FittedRule,
    lambda: f64,
    bandwidth: f64,
    sigma: Option<f64>,
    tune_score: f64,
    /// Larger is better, regardless of criterion.
    ranking: f64,
}

/// Strictly better, or tied with preferred hyperparameters (larger sigma,
/// then larger lambda, then smaller bandwidth).
fn beats(cand: &Candidate, incumbent: &Candidate) -> bool {
    if cand.ranking != incumbent.ranking {
        return cand.ranking > incumbent.ranking;
    }
    let cs = cand.sigma.unwrap_or(f64::NEG_INFINITY);
    let is_ = incumbent.sigma.unwrap_or(f64::NEG_INFINITY);
    if cs != is_ {
        return cs > is_;
    }
    if cand.lambda != incumbent.lambda {
        return cand.lambda > incumbent.lambda;
    }
    cand.bandwidth < incumbent.bandwidth
}

/// Fit every grid cell on `train`, score it on `tune`, and return the best
/// cell's rule. `deadline`, when given, bounds wall-clock time; exceeding it
/// aborts with [`EvalError::TimedOut`].
pub fn grid_search(
    train: &TrialDataset,
    tune: &TrialDataset,
    method: &MethodSpec,
    grid: &TuningGrid,
    deadline: Option<Instant>,
) -> Result<GridSearchOutcome, EvalError> {
    grid.validate()?;
    if train.dim() != tune.dim() {
        return Err(EvalError::SchemaMismatch { train: train.dim(), tune: tune.dim() });
    }
    if matches!(method.criterion, TuneCriterion::MinimizeExcessRisk) {
        tune.require_oracle()?;
    }
    let robust_sigmas = match (&method.loss, &grid.sigmas) {
        (LossFamily::RobustCc(_), Some(s)) => Some(s.clone()),
        (LossFamily::RobustCc(_), None) => {
            return Err(EvalError::InvalidGrid("robust loss requires a sigma grid".into()))
        }
        _ => None,
    };

    // The residual path transforms the training data once; every cell reuses
    // the transform. Tuning always scores against the raw tuning set.
    let (fit_data, residual_model) = match method.objective {
        ObjectivePath::Owl => (train.clone(), None),
        ObjectivePath::Rwl => {
            let model = rwl::fit_residual_model(train)?;
            let residuals = rwl::compute_residuals(&model, train)?;
            (rwl::residual_transform(train, &residuals)?, Some(model))
        }
    };

    let total = grid.lambdas.len()
        * grid.bandwidths.len()
        * robust_sigmas.as_ref().map_or(1, |s| s.len());
    let mut best: Option<Candidate> = None;
    let mut diagnostics: Vec<String> = Vec::new();
    let mut evaluated = 0usize;

    for &rho in &grid.bandwidths {
        let kernel = method.kernel.with_bandwidth(rho)?;
        let gram = kernels::gram_matrix(&kernel, fit_data.covariates())?;
        // The tune-set cross matrix is shared by every cell at this
        // bandwidth; scoring a cell is then one matrix-vector product.
        let cross = kernels::cross_kernel(&kernel, fit_data.covariates(), tune.covariates())?;
        let score_solution = |v: &[f64], bias: f64| -> Result<(f64, f64), EvalError> {
            let scores = &cross * nalgebra::DVector::from_column_slice(v);
            let assignments: Vec<f64> =
                scores.iter().map(|s| fit::decision_sign(s + bias)).collect();
            match method.criterion {
                TuneCriterion::MaximizeValue => {
                    let v = value_estimate_of(&assignments, tune)?;
                    Ok((v, v))
                }
                TuneCriterion::MinimizeExcessRisk => {
                    let r = empirical_excess_risk_of(&assignments, tune)?;
                    Ok((r, -r))
                }
            }
        };

        // Warm start along the lambda sweep: the convex solution moves
        // continuously in lambda. Robust chains start from the convex
        // binomial solution at their own cell, then walk sigma downward.
        let mut lambda_warm: Option<(Vec<f64>, f64)> = None;
        for &lambda in &grid.lambdas {
            if let Some(d) = deadline {
                if Instant::now() >= d {
                    return Err(EvalError::TimedOut { evaluated, total });
                }
            }
            let convex_loss = match &method.loss {
                LossFamily::Convex(loss) => loss.clone(),
                LossFamily::RobustCc(_) => LossSpec::binomial(),
            };
            let convex_opts =
                FitOptions { init: lambda_warm.clone(), ..Default::default() };
            let convex_fit = match fit::fit_convex_owl_with_gram(
                &fit_data,
                &convex_loss,
                &kernel,
                &gram,
                lambda,
                &convex_opts,
            ) {
                Ok(out) => out,
                Err(e) => {
                    diagnostics.push(format!("lambda={lambda} rho={rho}: {e}"));
                    if matches!(method.loss, LossFamily::Convex(_)) {
                        evaluated += 1;
                    }
                    continue;
                }
            };
            lambda_warm =
                Some((convex_fit.rule.coefficients().to_vec(), convex_fit.rule.bias()));

            match (&method.loss, &robust_sigmas) {
                (LossFamily::Convex(_), _) => {
                    evaluated += 1;
                    match score_solution(convex_fit.rule.coefficients(), convex_fit.rule.bias())
                    {
                        Ok((tune_score, ranking)) => {
                            let cand = Candidate {
                                rule: convex_fit.rule,
                                lambda,
                                bandwidth: rho,
                                sigma: None,
                                tune_score,
                                ranking,
                            };
                            if best.as_ref().is_none_or(|b| beats(&cand, b)) {
                                best = Some(cand);
                            }
                        }
                        Err(e) => diagnostics.push(format!("lambda={lambda} rho={rho}: {e}")),
                    }
                }
                (LossFamily::RobustCc(family), Some(sigmas)) => {
                    let mut warm =
                        (convex_fit.rule.coefficients().to_vec(), convex_fit.rule.bias());
                    let mut prev_score: Option<f64> = None;
                    let mut degradations = 0;
                    for &sigma in sigmas {
                        if let Some(d) = deadline {
                            if Instant::now() >= d {
                                return Err(EvalError::TimedOut { evaluated, total });
                            }
                        }
                        evaluated += 1;
                        let g = ConcaveComponent::new(*family, sigma * sigma)?;
                        let opts =
                            IrcoOptions { init: Some(warm.clone()), ..Default::default() };
                        match irco::irco_owl_with_gram(&fit_data, &g, &kernel, &gram, lambda, &opts)
                        {
                            Ok((rule, _state)) => {
                                warm = (rule.coefficients().to_vec(), rule.bias());
                                match score_solution(rule.coefficients(), rule.bias()) {
                                    Ok((tune_score, ranking)) => {
                                        if prev_score.is_some_and(|p| ranking < p) {
                                            degradations += 1;
                                        } else {
                                            degradations = 0;
                                        }
                                        prev_score = Some(ranking);
                                        let cand = Candidate {
                                            rule,
                                            lambda,
                                            bandwidth: rho,
                                            sigma: Some(sigma),
                                            tune_score,
                                            ranking,
                                        };
                                        if best.as_ref().is_none_or(|b| beats(&cand, b)) {
                                            best = Some(cand);
                                        }
                                        if degradations >= 2 {
                                            break;
                                        }
                                    }
                                    Err(e) => diagnostics.push(format!(
                                        "lambda={lambda} rho={rho} sigma={sigma}: {e}"
                                    )),
                                }
                            }
                            Err(e) => diagnostics
                                .push(format!("lambda={lambda} rho={rho} sigma={sigma}: {e}")),
                        }
                    }
                }
                (LossFamily::RobustCc(_), None) => unreachable!("validated above"),
            }
        }
    }

    match best {
        Some(c) => Ok(GridSearchOutcome {
            rule: c.rule,
            residual_model,
            best: BestCell {
                lambda: c.lambda,
                bandwidth: c.bandwidth,
                sigma: c.sigma,
                tune_score: c.tune_score,
            },
            cells_evaluated: evaluated,
        }),
        None => Err(EvalError::AllCellsFailed(diagnostics)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{OracleInfo, PointMatrix};
    use crate::simgen::{self, ScenarioSpec};
    use approx::assert_relative_eq;

    fn constant_rule(bias: f64, dim: usize) -> FittedRule {
        FittedRule::new(
            KernelSpec::gaussian(1.0).unwrap(),
            PointMatrix::from_rows(vec![vec![0.0; dim]]).unwrap(),
            vec![0.0],
            bias,
        )
        .unwrap()
    }

    fn oracle_test_set(dstar: Vec<f64>, rewards: Vec<f64>, treatments: Vec<f64>) -> TrialDataset {
        let n = dstar.len();
        let cov = PointMatrix::from_rows((0..n).map(|i| vec![i as f64]).collect()).unwrap();
        TrialDataset::new(cov, treatments, rewards, vec![0.5; n])
            .unwrap()
            .with_oracle(OracleInfo {
                tau: vec![0.0; n],
                xi: dstar.clone(),
                dstar,
                mu_gap: vec![1.0; n],
            })
            .unwrap()
    }

    #[test]
    fn misclassification_extremes() {
        let test = oracle_test_set(vec![1.0; 4], vec![1.0; 4], vec![1.0, -1.0, 1.0, -1.0]);
        let rule = constant_rule(1.0, 1);
        assert_eq!(misclassification(&rule, &test).unwrap(), 0.0);

        let test = oracle_test_set(vec![-1.0; 4], vec![1.0; 4], vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(misclassification(&rule, &test).unwrap(), 1.0);

        // The oracle's own assignments agree with the oracle by definition.
        let oracle = test.require_oracle().unwrap().dstar.clone();
        assert_eq!(misclassification_of(&oracle, &test).unwrap(), 0.0);
    }

    #[test]
    fn value_estimate_hand_cases() {
        // Everything matched: mean of all rewards.
        let test = oracle_test_set(vec![1.0; 3], vec![1.0, 2.0, 3.0], vec![1.0; 3]);
        let rule = constant_rule(0.5, 1);
        assert_relative_eq!(value_estimate(&rule, &test).unwrap(), 2.0, epsilon = 1e-12);

        // Nothing matched: explicit error, not NaN.
        let test = oracle_test_set(vec![1.0; 3], vec![1.0, 2.0, 3.0], vec![-1.0; 3]);
        assert!(matches!(value_estimate(&rule, &test), Err(EvalError::NoMatchedRows)));

        // Two matched rows with rewards 1 and 3.
        let test =
            oracle_test_set(vec![1.0; 3], vec![1.0, 9.0, 3.0], vec![1.0, -1.0, 1.0]);
        assert_relative_eq!(value_estimate(&rule, &test).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn value_estimate_ignores_row_order() {
        let spec = ScenarioSpec {
            example_id: 2,
            smooth: true,
            n: 500,
            m: 5,
            contamination_rate: 0.0,
            seed: 4,
        };
        let data = simgen::generate(&spec).unwrap();
        let assignments: Vec<f64> = data.oracle().unwrap().dstar.clone();
        let v1 = value_estimate_of(&assignments, &data).unwrap();

        // Reverse all rows.
        let rev_cov: Vec<Vec<f64>> =
            (0..data.n()).rev().map(|i| data.point(i).to_vec()).collect();
        let rev = TrialDataset::new(
            PointMatrix::from_rows(rev_cov).unwrap(),
            data.treatments().iter().rev().copied().collect(),
            data.rewards().iter().rev().copied().collect(),
            data.propensities().iter().rev().copied().collect(),
        )
        .unwrap();
        let rev_assign: Vec<f64> = assignments.iter().rev().copied().collect();
        let v2 = {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..rev.n() {
                if rev.treatments()[i] == rev_assign[i] {
                    num += rev.rewards()[i] / rev.propensities()[i];
                    den += 1.0 / rev.propensities()[i];
                }
            }
            num / den
        };
        assert_relative_eq!(v1, v2, epsilon = 1e-12);
    }

    #[test]
    fn excess_risk_extremes() {
        let test = oracle_test_set(
            vec![1.0, -1.0, 1.0],
            vec![0.0; 3],
            vec![1.0, -1.0, 1.0],
        );
        let oracle_assign = test.require_oracle().unwrap().dstar.clone();
        assert_eq!(empirical_excess_risk_of(&oracle_assign, &test).unwrap(), 0.0);

        let anti: Vec<f64> = oracle_assign.iter().map(|d| -d).collect();
        // mu_gap is 1 everywhere, so the anti-oracle pays the full average.
        assert_relative_eq!(
            empirical_excess_risk_of(&anti, &test).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn excess_risk_weighs_disagreements_by_the_mean_gap() {
        let n = 4;
        let cov = PointMatrix::from_rows((0..n).map(|i| vec![i as f64]).collect()).unwrap();
        let test = TrialDataset::new(cov, vec![1.0; n], vec![0.0; n], vec![0.5; n])
            .unwrap()
            .with_oracle(OracleInfo {
                tau: vec![0.0; n],
                xi: vec![0.5, 0.5, -0.25, 0.25],
                dstar: vec![1.0, 1.0, -1.0, 1.0],
                mu_gap: vec![1.0, 1.0, 0.5, 0.5],
            })
            .unwrap();
        // Disagree only on row 0 (gap 1.0): average contribution 0.25.
        let assignments = vec![-1.0, 1.0, -1.0, 1.0];
        assert_relative_eq!(
            empirical_excess_risk_of(&assignments, &test).unwrap(),
            0.25,
            epsilon = 1e-12
        );
    }

    #[test]
    fn oracle_rule_beats_random_assignments_on_value() {
        let mut wins = 0;
        for seed in 0..100u64 {
            let spec = ScenarioSpec {
                example_id: 2,
                smooth: true,
                n: 10_000,
                m: 5,
                contamination_rate: 0.0,
                seed: 1000 + seed,
            };
            let test = simgen::generate(&spec).unwrap();
            let oracle_assign = test.oracle().unwrap().dstar.clone();
            let v_oracle = value_estimate_of(&oracle_assign, &test).unwrap();
            let mut rng = crate::seeding::stream_rng(seed, 77);
            use rand::Rng;
            let random: Vec<f64> =
                (0..test.n()).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let v_random = value_estimate_of(&random, &test).unwrap();
            if v_oracle >= v_random {
                wins += 1;
            }
        }
        assert!(wins >= 95, "oracle won only {wins}/100 trials");
    }

    fn toy_train_tune() -> (TrialDataset, TrialDataset) {
        let spec = ScenarioSpec {
            example_id: 2,
            smooth: true,
            n: 60,
            m: 5,
            contamination_rate: 0.0,
            seed: 5,
        };
        let train = simgen::generate(&spec).unwrap();
        let tune = simgen::generate(&ScenarioSpec { seed: 6, ..spec }).unwrap();
        (train, tune)
    }

    #[test]
    fn singleton_grid_returns_that_cell() {
        let (train, tune) = toy_train_tune();
        let method = MethodSpec {
            name: "binomial-gaussian".into(),
            objective: ObjectivePath::Rwl,
            loss: LossFamily::Convex(LossSpec::binomial()),
            kernel: KernelFamily::Gaussian,
            criterion: TuneCriterion::MaximizeValue,
        };
        let grid =
            TuningGrid { lambdas: vec![1.0], bandwidths: vec![0.5], sigmas: None };
        let out = grid_search(&train, &tune, &method, &grid, None).unwrap();
        assert_eq!(out.best.lambda, 1.0);
        assert_eq!(out.best.bandwidth, 0.5);
        assert_eq!(out.cells_evaluated, 1);
        assert!(out.residual_model.is_some());
    }

    #[test]
    fn ties_prefer_larger_lambda_then_smaller_bandwidth() {
        // Zero rewards make every cell identical (value on the tune set is
        // reward mean over matched rows = 0 whenever matches exist).
        let (train, tune) = toy_train_tune();
        let zero_train = train
            .with_outcomes(train.treatments().to_vec(), vec![0.0; train.n()])
            .unwrap();
        let zero_tune =
            tune.with_outcomes(tune.treatments().to_vec(), vec![0.0; tune.n()]).unwrap();
        let method = MethodSpec {
            name: "owl".into(),
            objective: ObjectivePath::Owl,
            loss: LossFamily::Convex(LossSpec::binomial()),
            kernel: KernelFamily::Gaussian,
            criterion: TuneCriterion::MaximizeValue,
        };
        let grid = TuningGrid {
            lambdas: vec![0.1, 1.0, 10.0],
            bandwidths: vec![0.3, 1.0],
            sigmas: None,
        };
        let out = grid_search(&zero_train, &zero_tune, &method, &grid, None).unwrap();
        assert_eq!(out.best.lambda, 10.0);
        assert_eq!(out.best.bandwidth, 0.3);
    }

    #[test]
    fn grid_containing_a_good_cell_recovers_near_oracle_value() {
        let spec = ScenarioSpec {
            example_id: 2,
            smooth: true,
            n: 100,
            m: 5,
            contamination_rate: 0.0,
            seed: 15,
        };
        let train = simgen::generate(&spec).unwrap();
        let tune = simgen::generate(&ScenarioSpec { seed: 16, ..spec }).unwrap();
        let method = MethodSpec {
            name: "exponential".into(),
            objective: ObjectivePath::Rwl,
            loss: LossFamily::Convex(LossSpec::binomial()),
            kernel: KernelFamily::Matern { alpha: 0.5 },
            criterion: TuneCriterion::MaximizeValue,
        };
        let grid = TuningGrid {
            lambdas: vec![0.01, 0.1, 1.0],
            bandwidths: vec![0.3, 1.0, 3.0],
            sigmas: None,
        };
        let out = grid_search(&train, &tune, &method, &grid, None).unwrap();
        let oracle_assign = tune.oracle().unwrap().dstar.clone();
        let oracle_value = value_estimate_of(&oracle_assign, &tune).unwrap();
        assert!(
            out.best.tune_score >= oracle_value - 0.6,
            "tuned value {} far below oracle {oracle_value}",
            out.best.tune_score
        );
    }

    #[test]
    fn robust_chain_warm_starts_and_reports_sigma() {
        let (train, tune) = toy_train_tune();
        let method = MethodSpec {
            name: "gaussian-robust".into(),
            objective: ObjectivePath::Rwl,
            loss: LossFamily::RobustCc(ConcaveFamily::Tcave),
            kernel: KernelFamily::Gaussian,
            criterion: TuneCriterion::MaximizeValue,
        };
        let grid = TuningGrid {
            lambdas: vec![1.0],
            bandwidths: vec![0.5],
            sigmas: Some(vec![8.0, 4.0, 2.0]),
        };
        let out = grid_search(&train, &tune, &method, &grid, None).unwrap();
        assert!(out.best.sigma.is_some());
        assert!(out.cells_evaluated >= 1 && out.cells_evaluated <= 3);

        // Missing sigma grid is an error for robust losses.
        let bad = TuningGrid { lambdas: vec![1.0], bandwidths: vec![0.5], sigmas: None };
        assert!(grid_search(&train, &tune, &method, &bad, None).is_err());

        // Ascending sigmas are rejected.
        let bad = TuningGrid {
            lambdas: vec![1.0],
            bandwidths: vec![0.5],
            sigmas: Some(vec![2.0, 4.0]),
        };
        assert!(grid_search(&train, &tune, &method, &bad, None).is_err());
    }

    #[test]
    fn expired_deadline_times_out() {
        let (train, tune) = toy_train_tune();
        let method = MethodSpec {
            name: "owl".into(),
            objective: ObjectivePath::Rwl,
            loss: LossFamily::Convex(LossSpec::binomial()),
            kernel: KernelFamily::Gaussian,
            criterion: TuneCriterion::MaximizeValue,
        };
        let grid =
            TuningGrid { lambdas: vec![1.0], bandwidths: vec![0.5], sigmas: None };
        let past = Instant::now() - std::time::Duration::from_secs(1);
        assert!(matches!(
            grid_search(&train, &tune, &method, &grid, Some(past)),
            Err(EvalError::TimedOut { .. })
        ));
    }
}
