//! Conditional surrogate risks and the variational transform relating excess
//! surrogate risk to excess 0–1 risk.
//!
//! For conditional mean outcomes `mu = (mu_plus, mu_minus)` and a margin `p`,
//! the conditional risk is `C(p, mu) = mu_plus T(p) + mu_minus T(-p)`. Its
//! unconstrained infimum is the optimal risk `C*`; restricting `p` to the
//! closed half-line of the wrong sign gives `C^-`. The transform
//!
//! ```text
//! tilde_psi(v) = inf { C^-(mu) - C*(mu) :
//!                      mu >= 0, |mu_plus - mu_minus| = v, mu_plus + mu_minus <= M }
//! ```
//!
//! need not be convex; its lower convex envelope on a grid (equivalently, the
//! Fenchel–Legendre biconjugate restricted to grid resolution) is the
//! quantity that upper-bounds excess 0–1 risk. [`psi_curve`] computes both.
//!
//! Minimizations follow a fixed recipe: a coarse scan over a wide bracket to
//! localize basins (the scan reuses precomputed loss values, so it costs a
//! few hundred fused multiply-adds per query), golden-section refinement
//! around the best coarse point, and a comparison against the half-line
//! limit values, which dominate for the bounded robust losses.

use serde::Serialize;
use thiserror::Error;

use crate::losses::LossSpec;
use crate::parallel;

/// Half-width of the margin bracket for the inner minimizations over `p`.
const P_HALF_WIDTH: f64 = 50.0;
/// Coarse points for the inner scan; odd so that `p = 0` is on the grid.
const P_SCAN_POINTS: usize = 513;
/// Coarse points for the outer scan over `S = mu_plus + mu_minus`.
const S_SCAN_POINTS: usize = 257;
/// Golden-section iterations; brackets start ~0.4 wide, so this is plenty.
const GOLDEN_ITERS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("invalid conditional risk query: {0}")]
    InvalidQuery(String),
    #[error("v = {v} outside [0, {m}]")]
    OutOfRange { v: f64, m: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("loss `{0}` has no closed-form transform")]
    NoClosedForm(String),
    #[error("non-finite risk encountered ({0})")]
    NonFinite(String),
}

/// Conditional mean outcomes under each arm plus the cap `M` on their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalRiskQuery {
    mu_plus: f64,
    mu_minus: f64,
    cap: f64,
}

impl ConditionalRiskQuery {
    pub fn new(mu_plus: f64, mu_minus: f64, cap: f64) -> Result<Self, CalibrationError> {
        if !(mu_plus >= 0.0 && mu_minus >= 0.0 && mu_plus.is_finite() && mu_minus.is_finite()) {
            return Err(CalibrationError::InvalidQuery(format!(
                "means must be finite and nonnegative, got ({mu_plus}, {mu_minus})"
            )));
        }
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(CalibrationError::InvalidQuery(format!("cap must be positive, got {cap}")));
        }
        if mu_plus + mu_minus > cap * (1.0 + 1e-12) {
            return Err(CalibrationError::InvalidQuery(format!(
                "mu_plus + mu_minus = {} exceeds cap {cap}",
                mu_plus + mu_minus
            )));
        }
        Ok(Self { mu_plus, mu_minus, cap })
    }

    pub fn mu_plus(&self) -> f64 {
        self.mu_plus
    }

    pub fn mu_minus(&self) -> f64 {
        self.mu_minus
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }
}

/// `C(p, mu) = mu_plus T(p) + mu_minus T(-p)`.
pub fn conditional_risk(loss: &LossSpec, p: f64, q: &ConditionalRiskQuery) -> f64 {
    q.mu_plus * loss.evaluate(p) + q.mu_minus * loss.evaluate(-p)
}

/// Precomputed loss values on the coarse margin grid. One table serves every
/// `mu` query against the same loss, which is what makes the transform grids
/// affordable.
struct LossScan {
    ps: Vec<f64>,
    t_pos: Vec<f64>,
    t_neg: Vec<f64>,
    zero_index: usize,
}

impl LossScan {
    fn new(loss: &LossSpec) -> Self {
        let n = P_SCAN_POINTS;
        let mut ps = Vec::with_capacity(n);
        let mut t_pos = Vec::with_capacity(n);
        let mut t_neg = Vec::with_capacity(n);
        for k in 0..n {
            let p = -P_HALF_WIDTH + 2.0 * P_HALF_WIDTH * k as f64 / (n - 1) as f64;
            ps.push(p);
            t_pos.push(loss.evaluate(p));
            t_neg.push(loss.evaluate(-p));
        }
        LossScan { ps, t_pos, t_neg, zero_index: (n - 1) / 2 }
    }
}

/// `w * limit` with the `0 * inf = 0` convention for absent mass.
fn weighted_limit(w: f64, limit: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * limit
    }
}

fn golden_min(f: impl Fn(f64) -> f64, a: f64, b: f64, iters: usize) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    const INVPHI2: f64 = 0.381_966_011_250_105_2;
    let (mut a, mut b) = (a, b);
    let mut h = b - a;
    if h <= 0.0 {
        return (a, f(a));
    }
    let mut c = a + INVPHI2 * h;
    let mut d = a + INVPHI * h;
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            h = b - a;
            c = a + INVPHI2 * h;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            h = b - a;
            d = a + INVPHI * h;
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

struct RiskPair {
    optimal: f64,
    argmin: f64,
    wrong: f64,
}

/// Optimal and wrong-sign conditional risks for one `mu`, sharing one coarse
/// scan. The optimal value is taken over a superset of the wrong-sign
/// candidates, so `optimal <= wrong` holds exactly.
fn risk_pair(loss: &LossSpec, scan: &LossScan, mu_plus: f64, mu_minus: f64) -> RiskPair {
    let n = scan.ps.len();
    let c_at = |p: f64| mu_plus * loss.evaluate(p) + mu_minus * loss.evaluate(-p);

    // Coarse scan over the full bracket.
    let mut best_k = 0;
    let mut best_v = f64::INFINITY;
    let mut values = vec![0.0; n];
    for k in 0..n {
        let v = mu_plus * scan.t_pos[k] + mu_minus * scan.t_neg[k];
        values[k] = v;
        if v < best_v {
            best_v = v;
            best_k = k;
        }
    }

    // Refine around the best coarse point.
    let lo = scan.ps[best_k.saturating_sub(1)];
    let hi = scan.ps[(best_k + 1).min(n - 1)];
    let (p_full, v_full) = golden_min(c_at, lo, hi, GOLDEN_ITERS);
    let (mut p_full, mut v_full) = if v_full < best_v { (p_full, v_full) } else { (scan.ps[best_k], best_v) };

    // Half-line limits.
    let lim_pos = weighted_limit(mu_plus, loss.limit_pos()) + weighted_limit(mu_minus, loss.limit_neg());
    let lim_neg = weighted_limit(mu_plus, loss.limit_neg()) + weighted_limit(mu_minus, loss.limit_pos());

    if mu_plus == mu_minus {
        // The wrong-sign constraint is vacuous; both risks coincide.
        let mut optimal = v_full;
        if lim_pos < optimal {
            optimal = lim_pos;
            p_full = f64::INFINITY;
        }
        if lim_neg < optimal {
            optimal = lim_neg;
            p_full = f64::NEG_INFINITY;
        }
        return RiskPair { optimal, argmin: p_full, wrong: optimal };
    }

    // Wrong-sign side: the closed half-line through 0 opposite the optimal
    // sign. For mu_plus > mu_minus that is p <= 0.
    let zi = scan.zero_index;
    let (range, wrong_limit, clamp_hi): (std::ops::RangeInclusive<usize>, f64, bool) = if mu_plus > mu_minus {
        (0..=zi, lim_neg, true)
    } else {
        (zi..=n - 1, lim_pos, false)
    };
    let mut wk = *range.start();
    let mut wv = f64::INFINITY;
    for k in range {
        if values[k] < wv {
            wv = values[k];
            wk = k;
        }
    }
    let (mut wlo, mut whi) = (scan.ps[wk.saturating_sub(1)], scan.ps[(wk + 1).min(n - 1)]);
    if clamp_hi {
        whi = whi.min(0.0);
    } else {
        wlo = wlo.max(0.0);
    }
    let (_, wv_refined) = golden_min(c_at, wlo, whi, GOLDEN_ITERS);
    let at_zero = (mu_plus + mu_minus) * loss.value_at_zero();
    let wrong = wv.min(wv_refined).min(at_zero).min(wrong_limit);

    // Fold every wrong-sign candidate back into the optimum.
    let mut optimal = v_full.min(wrong).min(lim_pos).min(lim_neg);
    if optimal < v_full {
        // A limit or wrong-side candidate won; report the matching argmin.
        if optimal == lim_pos {
            p_full = f64::INFINITY;
        } else if optimal == lim_neg {
            p_full = f64::NEG_INFINITY;
        }
    } else {
        optimal = v_full;
    }
    v_full = optimal;
    RiskPair { optimal: v_full, argmin: p_full, wrong }
}

/// Optimal conditional risk `C*(mu) = inf_p C(p, mu)` and its argmin (which
/// is `+-inf` when a half-line limit attains the infimum).
pub fn optimal_conditional_risk(
    loss: &LossSpec,
    q: &ConditionalRiskQuery,
) -> Result<(f64, f64), CalibrationError> {
    let scan = LossScan::new(loss);
    let rp = risk_pair(loss, &scan, q.mu_plus, q.mu_minus);
    if rp.optimal.is_nan() {
        return Err(CalibrationError::NonFinite(format!(
            "C*({}, {})",
            q.mu_plus, q.mu_minus
        )));
    }
    Ok((rp.optimal, rp.argmin))
}

/// Optimal conditional risk over the wrong-sign half-line
/// `{p : p sign(mu_plus - mu_minus) <= 0}`; equal to the unconstrained
/// optimum when the means tie.
pub fn wrong_sign_conditional_risk(
    loss: &LossSpec,
    q: &ConditionalRiskQuery,
) -> Result<f64, CalibrationError> {
    let scan = LossScan::new(loss);
    let rp = risk_pair(loss, &scan, q.mu_plus, q.mu_minus);
    if rp.wrong.is_nan() {
        return Err(CalibrationError::NonFinite(format!(
            "C^-({}, {})",
            q.mu_plus, q.mu_minus
        )));
    }
    Ok(rp.wrong)
}

fn check_v_m(v: f64, m: f64) -> Result<(), CalibrationError> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(CalibrationError::InvalidGrid(format!("M must be positive, got {m}")));
    }
    if !(0.0..=m * (1.0 + 1e-12)).contains(&v) {
        return Err(CalibrationError::OutOfRange { v, m });
    }
    Ok(())
}

/// Minimize `gap(S)` over `S in [v, m]` via coarse scan plus refinement.
fn minimize_over_s(gap: impl Fn(f64) -> f64, v: f64, m: f64) -> f64 {
    if m - v < 1e-12 {
        // Degenerate slice: the constraint forces mu = (m, 0) up to mirror.
        return gap(m);
    }
    let n = S_SCAN_POINTS;
    let mut best_k = 0;
    let mut best_v = f64::INFINITY;
    let step = (m - v) / (n - 1) as f64;
    for k in 0..n {
        let s = v + step * k as f64;
        let g = gap(s);
        if g < best_v {
            best_v = g;
            best_k = k;
        }
    }
    let lo = v + step * best_k.saturating_sub(1) as f64;
    let hi = (v + step * (best_k + 1) as f64).min(m);
    let (_, refined) = golden_min(gap, lo, hi, GOLDEN_ITERS);
    refined.min(best_v)
}

/// `tilde_psi(v)`: the raw (possibly nonconvex) transform at one point.
///
/// By symmetry of the risks in `(mu_plus, mu_minus)` the slice is
/// parameterized by `S = mu_plus + mu_minus in [v, M]` with
/// `mu = ((S+v)/2, (S-v)/2)`.
pub fn tilde_psi(loss: &LossSpec, v: f64, m: f64) -> Result<f64, CalibrationError> {
    check_v_m(v, m)?;
    let scan = LossScan::new(loss);
    Ok(tilde_psi_with_scan(loss, &scan, v, m))
}

fn tilde_psi_with_scan(loss: &LossSpec, scan: &LossScan, v: f64, m: f64) -> f64 {
    if v == 0.0 {
        // mu_plus = mu_minus makes the wrong-sign constraint vacuous.
        return 0.0;
    }
    let gap = |s: f64| {
        let rp = risk_pair(loss, scan, 0.5 * (s + v), 0.5 * (s - v));
        rp.wrong - rp.optimal
    };
    minimize_over_s(gap, v, m)
}

/// The reduced transform for convex policy-calibrated losses:
/// `inf_S [ S T(0) - C*((S+v)/2, (S-v)/2) ]`. Numerically it must agree with
/// [`tilde_psi`] for every convex calibrated loss; tests enforce that.
pub fn tilde_psi_convex_reduced(loss: &LossSpec, v: f64, m: f64) -> Result<f64, CalibrationError> {
    check_v_m(v, m)?;
    let scan = LossScan::new(loss);
    let t0 = loss.value_at_zero();
    let gap = |s: f64| {
        let rp = risk_pair(loss, &scan, 0.5 * (s + v), 0.5 * (s - v));
        s * t0 - rp.optimal
    };
    Ok(minimize_over_s(gap, v, m))
}

/// Gridded transform: `tilde_values` hold the raw transform, `convex_values`
/// its lower convex envelope (the biconjugate at grid resolution).
#[derive(Debug, Clone, Serialize)]
pub struct PsiCurve {
    pub m: f64,
    pub grid: Vec<f64>,
    pub tilde_values: Vec<f64>,
    pub convex_values: Vec<f64>,
}

impl PsiCurve {
    /// Check the structural invariants; returns the first violation.
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let n = self.grid.len();
        if self.convex_values[0].abs() > 1e-12 {
            return Err(CalibrationError::InvalidGrid(format!(
                "envelope at 0 is {}, expected 0",
                self.convex_values[0]
            )));
        }
        for i in 0..n {
            if self.convex_values[i] > self.tilde_values[i] + 1e-12 {
                return Err(CalibrationError::InvalidGrid(format!(
                    "envelope exceeds raw transform at v = {}",
                    self.grid[i]
                )));
            }
            if i > 0 && self.convex_values[i] < self.convex_values[i - 1] - 1e-9 {
                return Err(CalibrationError::InvalidGrid(format!(
                    "envelope decreases at v = {}",
                    self.grid[i]
                )));
            }
        }
        for i in 1..n.saturating_sub(1) {
            let d2 = (self.convex_values[i + 1] - self.convex_values[i])
                / (self.grid[i + 1] - self.grid[i])
                - (self.convex_values[i] - self.convex_values[i - 1])
                    / (self.grid[i] - self.grid[i - 1]);
            if d2 < -1e-9 {
                return Err(CalibrationError::InvalidGrid(format!(
                    "envelope not convex at v = {} (second difference {d2})",
                    self.grid[i]
                )));
            }
        }
        Ok(())
    }

    /// Grid evidence for positive definiteness: strictly positive envelope
    /// at every positive grid point. Evidence only; a grid cannot prove it.
    pub fn positive_definite_on_grid(&self) -> bool {
        self.grid
            .iter()
            .zip(&self.convex_values)
            .skip(1)
            .all(|(_, &y)| y > 0.0)
    }
}

/// Lower convex envelope of `(x_i, y_i)` sampled back onto the `x` grid.
/// Monotone-chain lower hull; biconjugation of a gridded function is exactly
/// this.
fn lower_convex_envelope(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Drop b when it is on or above the chord a -> i.
            let lhs = (ys[b] - ys[a]) * (xs[i] - xs[a]);
            let rhs = (ys[i] - ys[a]) * (xs[b] - xs[a]);
            if lhs >= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = vec![0.0; n];
    let mut seg = 0;
    for i in 0..n {
        while seg + 1 < hull.len() && xs[hull[seg + 1]] <= xs[i] {
            seg += 1;
        }
        if hull[seg] == i {
            out[i] = ys[i];
        } else {
            let (a, b) = (hull[seg], hull[seg + 1]);
            let t = (xs[i] - xs[a]) / (xs[b] - xs[a]);
            out[i] = ys[a] + t * (ys[b] - ys[a]);
        }
    }
    out
}

/// Evaluate the transform on an even grid over `[0, M]` and convexify.
/// Grid points are independent, so they evaluate in parallel.
pub fn psi_curve(loss: &LossSpec, m: f64, n_grid: usize) -> Result<PsiCurve, CalibrationError> {
    if n_grid < 16 {
        return Err(CalibrationError::InvalidGrid(format!(
            "n_grid = {n_grid} < 16"
        )));
    }
    check_v_m(0.0, m)?;
    let scan = LossScan::new(loss);
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| m * i as f64 / (n_grid - 1) as f64)
        .collect();
    let tilde_values = parallel::map(&grid, |&v| tilde_psi_with_scan(loss, &scan, v, m));
    if let Some(bad) = tilde_values.iter().find(|t| !t.is_finite()) {
        return Err(CalibrationError::NonFinite(format!("tilde value {bad}")));
    }
    let convex_values = lower_convex_envelope(&grid, &tilde_values);
    Ok(PsiCurve { m, grid, tilde_values, convex_values })
}

fn xlnx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Closed-form transform values where one exists (oracle for [`psi_curve`]).
///
/// The distance-weighted discrimination row depends on the cap: its
/// transform is `(M + v - sqrt(M^2 - v^2)) / gamma`, which decays to the
/// familiar `v / gamma` only as `M -> inf` (the inf over the mean-sum is
/// approached at the boundary and keeps shrinking as the cap grows).
pub fn closed_form_psi(loss: &LossSpec, v: f64, m: f64) -> Result<f64, CalibrationError> {
    use crate::losses::LossKind::*;
    check_v_m(v, m)?;
    let r = v / m;
    match loss.kind() {
        Exponential => Ok(m * (1.0 - (1.0 - r * r).max(0.0).sqrt())),
        TruncatedQuadratic => Ok(v * v / m),
        Hinge => Ok(v),
        Dwd { gamma } => Ok((m + v - (m * m - v * v).max(0.0).sqrt()) / gamma),
        ArcX4 { k } => {
            let e = 1.0 / (k - 1.0);
            let base = (m - v).powf(e) + (m + v).powf(e);
            Ok(m - 2f64.powf(k - 1.0) * (m * m - v * v) * base.powf(1.0 - k))
        }
        Sigmoid { .. } => Ok(v),
        Binomial => Ok(0.5 * xlnx(m + v) + 0.5 * xlnx(m - v) - xlnx(m)),
        SmoothedRamp => Ok(v),
        _ => Err(CalibrationError::NoClosedForm(loss.name().to_string())),
    }
}

/// Result of a sampled policy-calibration screen: the minimum observed gap
/// `C^- - C*` over means with `|mu_plus - mu_minus| >= margin_floor`.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub loss: String,
    pub cap: f64,
    pub n_samples: usize,
    pub margin_floor: f64,
    pub min_gap: f64,
    pub argmin_mu: (f64, f64),
    pub passed: bool,
}

/// Sample mean pairs and check that the wrong sign is strictly worse at each.
pub fn check_policy_calibration(
    loss: &LossSpec,
    m: f64,
    n_samples: usize,
    margin_floor: f64,
    seed: u64,
) -> CalibrationReport {
    use rand::Rng;
    let mut rng = crate::seeding::stream_rng(seed, 0xCA11);
    let scan = LossScan::new(loss);
    let mut min_gap = f64::INFINITY;
    let mut argmin = (0.0, 0.0);
    for _ in 0..n_samples.max(1) {
        let v = rng.gen_range(margin_floor..=m);
        let s = rng.gen_range(v..=m);
        let (mut a, mut b) = (0.5 * (s + v), 0.5 * (s - v));
        if rng.gen::<bool>() {
            std::mem::swap(&mut a, &mut b);
        }
        let rp = risk_pair(loss, &scan, a, b);
        let gap = rp.wrong - rp.optimal;
        if gap < min_gap {
            min_gap = gap;
            argmin = (a, b);
        }
    }
    CalibrationReport {
        loss: loss.name().to_string(),
        cap: m,
        n_samples,
        margin_floor,
        min_gap,
        argmin_mu: argmin,
        passed: min_gap > 0.0,
    }
}
