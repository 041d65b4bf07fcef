//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Two-loop recursion over a bounded history of `(s, y)` pairs, bracketing
//! plus bisection zoom for the line search (Armijo `c1 = 1e-4`, curvature
//! `c2 = 0.9`). Curvature pairs with `s.y` too small are skipped rather than
//! corrupting the inverse-Hessian estimate, and a non-descent direction
//! resets the history to steepest descent, which keeps the method usable on
//! the piecewise-smooth losses in the catalog.
//!
//! Non-finite objective probes during the line search are treated as
//! "stepped too far" and shrink the bracket; a non-finite value at the
//! starting point is an error.

use nalgebra::DVector;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LbfgsError {
    #[error("objective is not finite at the starting point (f = {0})")]
    NonFiniteStart(f64),
}

#[derive(Debug, Clone)]
pub struct LbfgsParams {
    pub memory: usize,
    pub max_iter: usize,
    /// Sup-norm gradient tolerance.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        LbfgsParams { memory: 10, max_iter: 500, grad_tol: 1e-6, c1: 1e-4, c2: 0.9 }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm_inf: f64,
    pub iterations: usize,
    pub func_evals: usize,
    pub converged: bool,
}

fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Minimize `f`, which must write the gradient into its second argument and
/// return the objective value.
pub fn minimize<F>(
    mut f: F,
    x0: DVector<f64>,
    params: &LbfgsParams,
) -> Result<LbfgsOutcome, LbfgsError>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let dim = x0.len();
    let mut x = x0;
    let mut g = DVector::zeros(dim);
    let mut fx = f(&x, &mut g);
    let mut evals = 1usize;
    if !fx.is_finite() {
        return Err(LbfgsError::NonFiniteStart(fx));
    }

    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> =
        VecDeque::with_capacity(params.memory);
    let mut iterations = 0usize;

    while iterations < params.max_iter {
        let gnorm = norm_inf(&g);
        if gnorm <= params.grad_tol {
            return Ok(LbfgsOutcome {
                x,
                value: fx,
                grad_norm_inf: gnorm,
                iterations,
                func_evals: evals,
                converged: true,
            });
        }

        let mut dir = two_loop_direction(&g, &history);
        let mut dg = dir.dot(&g);
        if dg >= 0.0 {
            // Stale curvature information; restart from steepest descent.
            history.clear();
            dir = -&g;
            dg = dir.dot(&g);
        }

        let alpha0 = if history.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let ls = line_search(&mut f, &x, fx, &dir, dg, alpha0, params, &mut evals);
        let step = match ls {
            Some(step) => step,
            None => {
                // No acceptable decrease; report the current iterate.
                return Ok(LbfgsOutcome {
                    x,
                    value: fx,
                    grad_norm_inf: gnorm,
                    iterations,
                    func_evals: evals,
                    converged: gnorm <= params.grad_tol,
                });
            }
        };

        let s = &step.x - &x;
        let y = &step.g - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 * s.norm() * y.norm() {
            if history.len() == params.memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }

        let stalled = norm_inf(&s) <= 1e-15 * (1.0 + norm_inf(&step.x))
            && (fx - step.value).abs() <= 1e-16 * (1.0 + fx.abs());
        x = step.x;
        fx = step.value;
        g = step.g;
        iterations += 1;
        if stalled {
            break;
        }
    }

    let gnorm = norm_inf(&g);
    Ok(LbfgsOutcome {
        x,
        value: fx,
        grad_norm_inf: gnorm,
        iterations,
        func_evals: evals,
        converged: gnorm <= params.grad_tol,
    })
}

fn two_loop_direction(
    g: &DVector<f64>,
    history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>,
) -> DVector<f64> {
    let mut q = -g.clone();
    if history.is_empty() {
        return q;
    }
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    let (s_last, y_last, _) = history.back().unwrap();
    let gamma = s_last.dot(y_last) / y_last.dot(y_last);
    q *= gamma;
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    q
}

struct StepResult {
    x: DVector<f64>,
    value: f64,
    g: DVector<f64>,
}

/// Bracketing strong-Wolfe search. Returns `None` when no point with an
/// Armijo decrease can be located.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    f0: f64,
    dir: &DVector<f64>,
    dg0: f64,
    alpha0: f64,
    params: &LbfgsParams,
    evals: &mut usize,
) -> Option<StepResult>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    const MAX_BRACKET: usize = 30;
    const MAX_ZOOM: usize = 50;
    let dim = x.len();

    let mut probe = |alpha: f64, grad: &mut DVector<f64>| -> (f64, f64, DVector<f64>) {
        let xt = x + dir * alpha;
        let v = f(&xt, grad);
        *evals += 1;
        let slope = grad.dot(dir);
        (v, slope, xt)
    };

    let armijo = |alpha: f64, value: f64| value <= f0 + params.c1 * alpha * dg0;

    let mut grad = DVector::zeros(dim);
    let mut alpha_prev = 0.0f64;
    let mut f_prev = f0;
    let mut alpha = alpha0.max(1e-16);

    let mut bracket: Option<(f64, f64, f64)> = None; // (lo, f_lo, hi)
    for i in 0..MAX_BRACKET {
        let (v, slope, xt) = probe(alpha, &mut grad);
        if !v.is_finite() || !armijo(alpha, v) || (i > 0 && v >= f_prev) {
            bracket = Some((alpha_prev, f_prev, alpha));
            break;
        }
        if slope.abs() <= -params.c2 * dg0 {
            return Some(StepResult { x: xt, value: v, g: grad });
        }
        if slope >= 0.0 {
            bracket = Some((alpha, v, alpha_prev));
            break;
        }
        alpha_prev = alpha;
        f_prev = v;
        alpha *= 2.0;
        if alpha > 1e12 {
            // The objective keeps decreasing along an enormous ray; accept.
            return Some(StepResult { x: xt, value: v, g: grad });
        }
    }

    let (mut lo, mut f_lo, mut hi) = bracket?;
    let mut best: Option<StepResult> = None;
    for _ in 0..MAX_ZOOM {
        let alpha = 0.5 * (lo + hi);
        if (hi - lo).abs() <= 1e-16 * (1.0 + lo.abs()) {
            break;
        }
        let (v, slope, xt) = probe(alpha, &mut grad);
        if !v.is_finite() || !armijo(alpha, v) || v >= f_lo {
            hi = alpha;
        } else {
            if slope.abs() <= -params.c2 * dg0 {
                return Some(StepResult { x: xt, value: v, g: grad });
            }
            if slope * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = alpha;
            f_lo = v;
            best = Some(StepResult { x: xt, value: v, g: grad.clone() });
        }
    }
    if best.is_none() && lo > 0.0 && f_lo < f0 {
        // Curvature never held (kinks); recover the best Armijo point.
        let (v, _, xt) = probe(lo, &mut grad);
        if v.is_finite() && v < f0 {
            return Some(StepResult { x: xt, value: v, g: grad });
        }
    }
    best
}
