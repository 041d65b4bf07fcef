//! The regularized weighted-surrogate objective in representer coordinates
//! and its quasi-Newton minimization.
//!
//! With Gram matrix `K` of the training covariates, decision scores are
//! `f_i = (K v)_i + delta` and the objective is
//!
//! ```text
//! (1/n) sum_i w_i (r_i / pi_i) T(a_i (f_i + delta)) + (lambda/2) v' K v
//! ```
//!
//! The bias `delta` is not penalized. Case weights `w_i` default to one;
//! the iteratively reweighted solver supplies its own.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, PointMatrix, TrialDataset};
use crate::kernels::{self, KernelError, KernelSpec};
use crate::lbfgs::{self, LbfgsError, LbfgsParams};
use crate::losses::LossSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("lambda = {0}, must be positive")]
    LambdaNotPositive(f64),
    #[error(
        "reward[{index}] = {value} is negative; the outcome-weighted path \
         requires nonnegative rewards — use the residual-weighted path instead"
    )]
    NegativeReward { index: usize, value: f64 },
    #[error("case_weight[{index}] = {value}, must be nonnegative and finite")]
    InvalidCaseWeight { index: usize, value: f64 },
    #[error("case weight vector has length {got}, expected {expected}")]
    CaseWeightLength { got: usize, expected: usize },
    #[error("gram matrix is {rows}x{cols}, expected {n}x{n}")]
    GramShape { rows: usize, cols: usize, n: usize },
    #[error("initial point has dimension {got}, expected {expected}")]
    InitDimension { got: usize, expected: usize },
    #[error("loss `{0}` is not convex; use the iteratively reweighted solver")]
    NonConvexLoss(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("solver failed: {0}")]
    Solver(#[from] LbfgsError),
    #[error("rule serialization failed: {0}")]
    Serialization(String),
}

/// Deterministic sign with `sign(0) = +1`, used for every treatment decision.
pub fn decision_sign(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Score and treatment for one covariate vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub score: f64,
    pub treatment: f64,
}

/// A fitted decision rule: kernel expansion over the training covariates
/// plus an unpenalized bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRule {
    kernel: KernelSpec,
    support: PointMatrix,
    coefficients: Vec<f64>,
    bias: f64,
}

impl FittedRule {
    pub fn new(
        kernel: KernelSpec,
        support: PointMatrix,
        coefficients: Vec<f64>,
        bias: f64,
    ) -> Result<Self, FitError> {
        if coefficients.len() != support.rows() {
            return Err(FitError::InitDimension {
                got: coefficients.len(),
                expected: support.rows(),
            });
        }
        Ok(Self { kernel, support, coefficients, bias })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn support(&self) -> &PointMatrix {
        &self.support
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// `f(x) + delta = sum_j v_j k(x, x_j) + delta`.
    pub fn score(&self, x: &[f64]) -> Result<f64, FitError> {
        let mut s = self.bias;
        for (j, v) in self.coefficients.iter().enumerate() {
            s += v * self.kernel.eval(x, self.support.row(j))?;
        }
        Ok(s)
    }

    pub fn decide(&self, x: &[f64]) -> Result<Decision, FitError> {
        let score = self.score(x)?;
        Ok(Decision { score, treatment: decision_sign(score) })
    }

    /// Scores for a batch of points via one cross-kernel product.
    pub fn score_batch(&self, points: &PointMatrix) -> Result<Vec<f64>, FitError> {
        let cross = kernels::cross_kernel(&self.kernel, &self.support, points)?;
        let v = DVector::from_column_slice(&self.coefficients);
        let scores = cross * v;
        Ok(scores.iter().map(|s| s + self.bias).collect())
    }

    /// Treatment assignments for a batch of points.
    pub fn assign_batch(&self, points: &PointMatrix) -> Result<Vec<f64>, FitError> {
        Ok(self.score_batch(points)?.into_iter().map(decision_sign).collect())
    }

    pub fn to_json(&self) -> Result<String, FitError> {
        serde_json::to_string_pretty(self).map_err(|e| FitError::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, FitError> {
        serde_json::from_str(s).map_err(|e| FitError::Serialization(e.to_string()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Warm start `(v, delta)`; zeros otherwise.
    pub init: Option<(Vec<f64>, f64)>,
    /// Per-observation weights multiplying `r_i / pi_i`; ones otherwise.
    pub case_weights: Option<Vec<f64>>,
    /// Gradient sup-norm tolerance; `1e-6 * n` otherwise.
    pub grad_tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub iterations: usize,
    pub func_evals: usize,
    pub objective: f64,
    pub grad_norm_inf: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub rule: FittedRule,
    pub report: FitReport,
}

/// Per-observation objective coefficients `w_i r_i / (pi_i n)`; shared by
/// the objective, gradient, and solver paths.
fn loss_coefficients(
    data: &TrialDataset,
    case_weights: Option<&[f64]>,
    reject_negative_rewards: bool,
) -> Result<Vec<f64>, FitError> {
    let n = data.n();
    if let Some(w) = case_weights {
        if w.len() != n {
            return Err(FitError::CaseWeightLength { got: w.len(), expected: n });
        }
        for (i, &wi) in w.iter().enumerate() {
            if !(wi >= 0.0 && wi.is_finite()) {
                return Err(FitError::InvalidCaseWeight { index: i, value: wi });
            }
        }
    }
    let mut coef = Vec::with_capacity(n);
    for i in 0..n {
        let r = data.rewards()[i];
        if reject_negative_rewards && r < 0.0 {
            return Err(FitError::NegativeReward { index: i, value: r });
        }
        let w = case_weights.map_or(1.0, |w| w[i]);
        coef.push(w * r / (data.propensities()[i] * n as f64));
    }
    Ok(coef)
}

fn check_gram(gram: &DMatrix<f64>, n: usize) -> Result<(), FitError> {
    if gram.nrows() != n || gram.ncols() != n {
        return Err(FitError::GramShape { rows: gram.nrows(), cols: gram.ncols(), n });
    }
    Ok(())
}

/// Fused objective/gradient evaluation over `x = [v; beta]` with
/// `delta = beta * bias_scale`. The public objective/gradient use scale 1;
/// the solver uses `sqrt(1 + lambda)` so the unpenalized-bias coordinate
/// shares the curvature scale of the ridge block, which otherwise makes
/// high-lambda cells needlessly ill-conditioned.
struct OwlProblem<'a> {
    gram: &'a DMatrix<f64>,
    treatments: &'a [f64],
    coef: &'a [f64],
    loss: &'a LossSpec,
    lambda: f64,
    bias_scale: f64,
}

impl OwlProblem<'_> {
    fn eval(&self, x: &DVector<f64>, mut grad: Option<&mut DVector<f64>>) -> f64 {
        let n = self.gram.nrows();
        let v = x.rows(0, n);
        let delta = x[n] * self.bias_scale;
        let u = self.gram * v;
        let mut value = 0.5 * self.lambda * v.dot(&u);
        let mut t = DVector::zeros(n);
        for i in 0..n {
            let a = self.treatments[i];
            let m = a * (u[i] + delta);
            value += self.coef[i] * self.loss.evaluate(m);
            if grad.is_some() {
                t[i] = self.coef[i] * self.loss.derivative(m) * a;
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            let inner = &t + v.scale(self.lambda);
            let gv = self.gram * inner;
            g.rows_mut(0, n).copy_from(&gv);
            g[n] = t.sum() * self.bias_scale;
        }
        value
    }
}

/// Objective value of the weighted-surrogate problem at `(v, delta)`.
pub fn owl_objective(
    v: &[f64],
    delta: f64,
    data: &TrialDataset,
    loss: &LossSpec,
    gram: &DMatrix<f64>,
    lambda: f64,
    case_weights: Option<&[f64]>,
) -> Result<f64, FitError> {
    let n = data.n();
    check_gram(gram, n)?;
    if !(lambda > 0.0) {
        return Err(FitError::LambdaNotPositive(lambda));
    }
    if v.len() != n {
        return Err(FitError::InitDimension { got: v.len(), expected: n });
    }
    let coef = loss_coefficients(data, case_weights, true)?;
    let problem = OwlProblem {
        gram,
        treatments: data.treatments(),
        coef: &coef,
        loss,
        lambda,
        bias_scale: 1.0,
    };
    let mut x = DVector::from_column_slice(v);
    x = x.push(delta);
    Ok(problem.eval(&x, None))
}

/// Analytic gradient `(d/dv, d/ddelta)` of [`owl_objective`].
pub fn owl_gradient(
    v: &[f64],
    delta: f64,
    data: &TrialDataset,
    loss: &LossSpec,
    gram: &DMatrix<f64>,
    lambda: f64,
    case_weights: Option<&[f64]>,
) -> Result<(Vec<f64>, f64), FitError> {
    let n = data.n();
    check_gram(gram, n)?;
    if !(lambda > 0.0) {
        return Err(FitError::LambdaNotPositive(lambda));
    }
    if v.len() != n {
        return Err(FitError::InitDimension { got: v.len(), expected: n });
    }
    let coef = loss_coefficients(data, case_weights, true)?;
    let problem = OwlProblem {
        gram,
        treatments: data.treatments(),
        coef: &coef,
        loss,
        lambda,
        bias_scale: 1.0,
    };
    let mut x = DVector::from_column_slice(v);
    x = x.push(delta);
    let mut g = DVector::zeros(n + 1);
    problem.eval(&x, Some(&mut g));
    Ok((g.as_slice()[..n].to_vec(), g[n]))
}

/// Minimize the weighted-surrogate objective for a convex loss with a
/// caller-supplied Gram matrix (grid searches reuse it across lambdas).
pub fn fit_convex_owl_with_gram(
    data: &TrialDataset,
    loss: &LossSpec,
    kernel: &KernelSpec,
    gram: &DMatrix<f64>,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FitOutcome, FitError> {
    let n = data.n();
    check_gram(gram, n)?;
    if !(lambda > 0.0) {
        return Err(FitError::LambdaNotPositive(lambda));
    }
    if !loss.is_convex() {
        return Err(FitError::NonConvexLoss(loss.name().to_string()));
    }
    let coef = loss_coefficients(data, opts.case_weights.as_deref(), true)?;
    let bias_scale = (1.0 + lambda).sqrt();
    let problem = OwlProblem {
        gram,
        treatments: data.treatments(),
        coef: &coef,
        loss,
        lambda,
        bias_scale,
    };

    let x0 = match &opts.init {
        Some((v, delta)) => {
            if v.len() != n {
                return Err(FitError::InitDimension { got: v.len(), expected: n });
            }
            let mut x = DVector::from_column_slice(v);
            x = x.push(*delta / bias_scale);
            x
        }
        None => DVector::zeros(n + 1),
    };

    let params = LbfgsParams {
        memory: 10,
        max_iter: opts.max_iter.unwrap_or(500),
        grad_tol: opts.grad_tol.unwrap_or(1e-6 * n as f64),
        ..Default::default()
    };
    let outcome = lbfgs::minimize(|x, g| problem.eval(x, Some(g)), x0, &params)?;

    let coefficients = outcome.x.as_slice()[..n].to_vec();
    let bias = outcome.x[n] * bias_scale;
    let rule = FittedRule::new(*kernel, data.covariates().clone(), coefficients, bias)?;
    Ok(FitOutcome {
        rule,
        report: FitReport {
            iterations: outcome.iterations,
            func_evals: outcome.func_evals,
            objective: outcome.value,
            grad_norm_inf: outcome.grad_norm_inf,
            converged: outcome.converged,
        },
    })
}

/// Minimize the weighted-surrogate objective for a convex loss.
pub fn fit_convex_owl(
    data: &TrialDataset,
    loss: &LossSpec,
    kernel: &KernelSpec,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FitOutcome, FitError> {
    let gram = kernels::gram_matrix(kernel, data.covariates())?;
    fit_convex_owl_with_gram(data, loss, kernel, &gram, lambda, opts)
}
