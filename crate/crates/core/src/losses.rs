//! Surrogate loss catalog: convex margin losses and robust concave–convex
//! compositions, with evaluators, derivatives, and the analytic metadata the
//! calibration and fitting layers rely on.
//!
//! Every loss is a nonnegative function of the margin `p`. Convex entries
//! (exponential, truncated quadratic, hinge, distance-weighted
//! discrimination, ARC-X4, binomial) are minimized directly; the bounded
//! nonconvex entries (sigmoid, smoothed ramp) are cataloged for calibration
//! work; and the robust family composes a concave nondecreasing `g` with the
//! binomial loss `s(p) = log(1 + exp(-p))`, which is what the iteratively
//! reweighted solver in [`crate::irco`] linearizes.

use std::collections::BTreeMap;

use thiserror::Error;

/// Margins are clamped to this magnitude before exponentials so that IEEE
/// doubles cannot overflow; no test regime comes near it.
pub const EVAL_CLAMP: f64 = 700.0;

/// Half-width of the reference window on which Lipschitz constants are
/// declared for losses whose slope is unbounded on all of the real line
/// (exponential, truncated quadratic, ARC-X4).
pub const REFERENCE_WINDOW: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("unknown loss name `{0}`")]
    UnknownName(String),
    #[error("loss `{loss}` requires parameter `{param}`")]
    MissingParameter { loss: String, param: String },
    #[error("parameter `{param}` = {value} out of range for loss `{loss}`: {requirement}")]
    InvalidParameter {
        loss: String,
        param: String,
        value: f64,
        requirement: String,
    },
    #[error("supergradient queried at negative z = {0}")]
    NegativeArgument(f64),
}

/// Numerically stable `s(p) = log(1 + exp(-p))`.
fn log1p_exp_neg(p: f64) -> f64 {
    let p = p.clamp(-EVAL_CLAMP, EVAL_CLAMP);
    if p >= 0.0 {
        (-p).exp().ln_1p()
    } else {
        -p + p.exp().ln_1p()
    }
}

/// Stable `s'(p) = -1 / (1 + exp(p))`.
fn log1p_exp_neg_deriv(p: f64) -> f64 {
    let p = p.clamp(-EVAL_CLAMP, EVAL_CLAMP);
    if p >= 0.0 {
        let e = (-p).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + p.exp())
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

// ---------------------------------------------------------------------------
// Concave components
// ---------------------------------------------------------------------------

/// The four concave families used to robustify the binomial loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcaveFamily {
    Acave,
    Bcave,
    Ccave,
    Tcave,
}

impl ConcaveFamily {
    pub fn name(self) -> &'static str {
        match self {
            ConcaveFamily::Acave => "acave",
            ConcaveFamily::Bcave => "bcave",
            ConcaveFamily::Ccave => "ccave",
            ConcaveFamily::Tcave => "tcave",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "acave" => Some(ConcaveFamily::Acave),
            "bcave" => Some(ConcaveFamily::Bcave),
            "ccave" => Some(ConcaveFamily::Ccave),
            "tcave" => Some(ConcaveFamily::Tcave),
            _ => None,
        }
    }

    /// Admissible `sigma^2` interval guaranteeing the calibration theory.
    /// Values outside it are accepted with a warning: tuning grids routinely
    /// leave the interval.
    pub fn valid_sigma_sq_range(self) -> (f64, f64) {
        let ln2 = std::f64::consts::LN_2;
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        match self {
            ConcaveFamily::Acave => (2.0 * ln2 / pi2, 4.0 * ln2 / pi2),
            ConcaveFamily::Bcave => (2.0 * ln2, 2.0 * ln2 / (1.0 - 0.5f64.powf(1.0 / 3.0))),
            ConcaveFamily::Ccave => (0.0, 1.0),
            ConcaveFamily::Tcave => (ln2 * ln2, 4.0 * ln2 * ln2),
        }
    }
}

/// A concave nondecreasing `g` with `g(0) = 0`, parameterized by `sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConcaveComponent {
    family: ConcaveFamily,
    sigma_sq: f64,
}

impl ConcaveComponent {
    pub fn new(family: ConcaveFamily, sigma_sq: f64) -> Result<Self, LossError> {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(LossError::InvalidParameter {
                loss: format!("cc:{}", family.name()),
                param: "sigma_sq".into(),
                value: sigma_sq,
                requirement: "sigma_sq > 0".into(),
            });
        }
        let (lo, hi) = family.valid_sigma_sq_range();
        if sigma_sq <= lo || sigma_sq > hi {
            log::warn!(
                "{}: sigma_sq = {sigma_sq} outside the calibrated range ({lo:.4}, {hi:.4}]; \
                 proceeding anyway",
                family.name()
            );
        }
        Ok(Self { family, sigma_sq })
    }

    pub fn family(&self) -> ConcaveFamily {
        self.family
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }

    /// `g(z)` for `z >= 0`.
    pub fn evaluate(&self, z: f64) -> f64 {
        assert!(z >= 0.0, "concave component evaluated at negative z");
        let s2 = self.sigma_sq;
        match self.family {
            ConcaveFamily::Acave => {
                let cutoff = s2 * std::f64::consts::PI * std::f64::consts::PI / 2.0;
                if z <= cutoff {
                    // (1 - cos x)/2 = sin^2(x/2) with x = sqrt(2z)/sigma
                    let x = (2.0 * z).sqrt() / self.sigma();
                    let s = (0.5 * x).sin();
                    s * s
                } else {
                    1.0
                }
            }
            ConcaveFamily::Bcave => {
                if z <= s2 / 2.0 {
                    let t = 1.0 - 2.0 * z / s2;
                    1.0 - t * t * t
                } else {
                    1.0
                }
            }
            ConcaveFamily::Ccave => -(-z / s2).exp_m1(),
            ConcaveFamily::Tcave => z.min(self.sigma()),
        }
    }

    /// Supergradient `g'(z) >= 0`; at the tcave kink `z = sigma` this is the
    /// right derivative 0, so saturated outliers are fully zeroed out.
    pub fn supergradient(&self, z: f64) -> f64 {
        assert!(z >= 0.0, "supergradient queried at negative z");
        let s2 = self.sigma_sq;
        match self.family {
            ConcaveFamily::Acave => {
                let cutoff = s2 * std::f64::consts::PI * std::f64::consts::PI / 2.0;
                if z <= cutoff {
                    // d/dz sin^2(sqrt(2z)/(2 sigma)) = sinc(sqrt(2z)/sigma) / (2 sigma^2)
                    let x = (2.0 * z).sqrt() / self.sigma();
                    sinc(x) / (2.0 * s2)
                } else {
                    0.0
                }
            }
            ConcaveFamily::Bcave => {
                if z <= s2 / 2.0 {
                    let t = 1.0 - 2.0 * z / s2;
                    6.0 / s2 * t * t
                } else {
                    0.0
                }
            }
            ConcaveFamily::Ccave => (-z / s2).exp() / s2,
            ConcaveFamily::Tcave => {
                if z < self.sigma() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Lipschitz constant of `g` (its supremum slope, attained at z = 0).
    pub fn lipschitz(&self) -> f64 {
        match self.family {
            ConcaveFamily::Acave => 1.0 / (2.0 * self.sigma_sq),
            ConcaveFamily::Bcave => 6.0 / self.sigma_sq,
            ConcaveFamily::Ccave => 1.0 / self.sigma_sq,
            ConcaveFamily::Tcave => 1.0,
        }
    }

    /// `sup_z g(z)`.
    pub fn sup_value(&self) -> f64 {
        match self.family {
            ConcaveFamily::Tcave => self.sigma(),
            _ => 1.0,
        }
    }
}

/// Supergradient weight `g'(z)` used by the reweighting step of the
/// iteratively reweighted solver; errors on negative `z`.
pub fn supergradient_weight(g: &ConcaveComponent, z: f64) -> Result<f64, LossError> {
    if z < 0.0 {
        return Err(LossError::NegativeArgument(z));
    }
    Ok(g.supergradient(z))
}

// ---------------------------------------------------------------------------
// Loss specifications
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    Exponential,
    TruncatedQuadratic,
    Hinge,
    /// Distance-weighted discrimination with margin parameter `gamma`.
    Dwd { gamma: f64 },
    ArcX4 { k: f64 },
    Sigmoid { k: f64 },
    Binomial,
    SmoothedRamp,
    /// Robust composition `g(s(p))` with the binomial component `s`.
    ConcaveConvex(ConcaveComponent),
    /// Constant loss; useful as a negative control for calibration screens.
    Constant { value: f64 },
}

/// A surrogate loss with evaluator, derivative, and declared analytic
/// properties.
///
/// `lipschitz` is the global Lipschitz constant when one exists; for the
/// losses with unbounded slope it is the constant on the reference window
/// `[-REFERENCE_WINDOW, REFERENCE_WINDOW]` used by the calibration tests.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    name: String,
    kind: LossKind,
    value_at_zero: f64,
    lipschitz: f64,
    bound: f64,
    is_convex: bool,
    limit_neg: f64,
    limit_pos: f64,
}

impl LossSpec {
    pub fn exponential() -> Self {
        LossSpec {
            name: "exponential".into(),
            kind: LossKind::Exponential,
            value_at_zero: 1.0,
            lipschitz: REFERENCE_WINDOW.exp(),
            bound: f64::INFINITY,
            is_convex: true,
            limit_neg: f64::INFINITY,
            limit_pos: 0.0,
        }
    }

    pub fn truncated_quadratic() -> Self {
        LossSpec {
            name: "truncated_quadratic".into(),
            kind: LossKind::TruncatedQuadratic,
            value_at_zero: 1.0,
            lipschitz: 2.0 * (1.0 + REFERENCE_WINDOW),
            bound: f64::INFINITY,
            is_convex: true,
            limit_neg: f64::INFINITY,
            limit_pos: 0.0,
        }
    }

    pub fn hinge() -> Self {
        LossSpec {
            name: "hinge".into(),
            kind: LossKind::Hinge,
            value_at_zero: 1.0,
            lipschitz: 1.0,
            bound: f64::INFINITY,
            is_convex: true,
            limit_neg: f64::INFINITY,
            limit_pos: 0.0,
        }
    }

    pub fn dwd(gamma: f64) -> Result<Self, LossError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(LossError::InvalidParameter {
                loss: "dwd".into(),
                param: "gamma".into(),
                value: gamma,
                requirement: "gamma > 0".into(),
            });
        }
        Ok(LossSpec {
            name: "dwd".into(),
            kind: LossKind::Dwd { gamma },
            value_at_zero: 2.0 / gamma,
            lipschitz: 1.0 / (gamma * gamma),
            bound: f64::INFINITY,
            is_convex: true,
            limit_neg: f64::INFINITY,
            limit_pos: 0.0,
        })
    }

    pub fn arcx4(k: f64) -> Result<Self, LossError> {
        if !(k > 1.0 && k.is_finite()) {
            return Err(LossError::InvalidParameter {
                loss: "arcx4".into(),
                param: "k".into(),
                value: k,
                requirement: "k > 1".into(),
            });
        }
        Ok(LossSpec {
            name: "arcx4".into(),
            kind: LossKind::ArcX4 { k },
            value_at_zero: 1.0,
            lipschitz: k * (1.0 + REFERENCE_WINDOW).powf(k - 1.0),
            bound: f64::INFINITY,
            is_convex: true,
            limit_neg: f64::INFINITY,
            limit_pos: f64::INFINITY,
        })
    }

    pub fn sigmoid(k: f64) -> Result<Self, LossError> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(LossError::InvalidParameter {
                loss: "sigmoid".into(),
                param: "k".into(),
                value: k,
                requirement: "k > 0".into(),
            });
        }
        Ok(LossSpec {
            name: "sigmoid".into(),
            kind: LossKind::Sigmoid { k },
            value_at_zero: 1.0,
            lipschitz: k,
            bound: 2.0,
            is_convex: false,
            limit_neg: 2.0,
            limit_pos: 0.0,
        })
    }

    pub fn binomial() -> Self {
        LossSpec {
            name: "binomial".into(),
            kind: LossKind::Binomial,
            value_at_zero: std::f64::consts::LN_2,
            lipschitz: 1.0,
            bound: f64::INFINITY,
            is_convex: true,
            limit_neg: f64::INFINITY,
            limit_pos: 0.0,
        }
    }

    pub fn smoothed_ramp() -> Self {
        LossSpec {
            name: "smoothed_ramp".into(),
            kind: LossKind::SmoothedRamp,
            value_at_zero: 1.0,
            lipschitz: 2.0,
            bound: 2.0,
            is_convex: false,
            limit_neg: 2.0,
            limit_pos: 0.0,
        }
    }

    /// Constant loss `T = value`; never calibrated, used as a control.
    pub fn constant(value: f64) -> Self {
        LossSpec {
            name: "constant".into(),
            kind: LossKind::Constant { value },
            value_at_zero: value,
            lipschitz: 0.0,
            bound: value,
            is_convex: true,
            limit_neg: value,
            limit_pos: value,
        }
    }

    /// Robust loss `T = g o s` with the binomial component `s`. Since `s`
    /// is 1-Lipschitz, `T` inherits the Lipschitz constant of `g`.
    pub fn concave_convex(g: ConcaveComponent) -> Self {
        LossSpec {
            name: format!("cc:{}", g.family().name()),
            kind: LossKind::ConcaveConvex(g),
            value_at_zero: g.evaluate(std::f64::consts::LN_2),
            lipschitz: g.lipschitz(),
            bound: g.sup_value(),
            is_convex: false,
            limit_neg: g.sup_value(),
            limit_pos: 0.0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn value_at_zero(&self) -> f64 {
        self.value_at_zero
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Upper bound `D` with `T(p) <= D`; infinite for unbounded losses.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn is_convex(&self) -> bool {
        self.is_convex
    }

    /// `T(-inf)`.
    pub fn limit_neg(&self) -> f64 {
        self.limit_neg
    }

    /// `T(+inf)`.
    pub fn limit_pos(&self) -> f64 {
        self.limit_pos
    }

    pub fn concave_component(&self) -> Option<&ConcaveComponent> {
        match &self.kind {
            LossKind::ConcaveConvex(g) => Some(g),
            _ => None,
        }
    }

    /// Margins where the derivative jumps (one-sided choices declared in the
    /// derivative implementation).
    pub fn kinks(&self) -> Vec<f64> {
        match &self.kind {
            LossKind::Hinge => vec![1.0],
            LossKind::Dwd { gamma } => vec![*gamma],
            LossKind::ArcX4 { .. } => vec![1.0],
            LossKind::SmoothedRamp => vec![-1.0, 0.0, 1.0],
            LossKind::ConcaveConvex(g) => match g.family() {
                // s(p) = sigma at p = -ln(e^sigma - 1)
                ConcaveFamily::Tcave => vec![-(g.sigma().exp() - 1.0).ln()],
                ConcaveFamily::Acave => {
                    let z = g.sigma_sq() * std::f64::consts::PI * std::f64::consts::PI / 2.0;
                    vec![-(z.exp() - 1.0).ln()]
                }
                ConcaveFamily::Bcave => {
                    let z = g.sigma_sq() / 2.0;
                    vec![-(z.exp() - 1.0).ln()]
                }
                ConcaveFamily::Ccave => vec![],
            },
            _ => vec![],
        }
    }

    /// `T(p)`.
    pub fn evaluate(&self, p: f64) -> f64 {
        let p = p.clamp(-EVAL_CLAMP, EVAL_CLAMP);
        match &self.kind {
            LossKind::Exponential => (-p).exp(),
            LossKind::TruncatedQuadratic => {
                let t = (1.0 - p).max(0.0);
                t * t
            }
            LossKind::Hinge => (1.0 - p).max(0.0),
            LossKind::Dwd { gamma } => {
                if p >= *gamma {
                    1.0 / p
                } else {
                    (2.0 - p / gamma) / gamma
                }
            }
            LossKind::ArcX4 { k } => (1.0 - p).abs().powf(*k),
            LossKind::Sigmoid { k } => 1.0 - (k * p).tanh(),
            LossKind::Binomial => log1p_exp_neg(p),
            LossKind::SmoothedRamp => {
                if p >= 1.0 {
                    0.0
                } else if p >= 0.0 {
                    (1.0 - p) * (1.0 - p)
                } else if p >= -1.0 {
                    2.0 - (1.0 + p) * (1.0 + p)
                } else {
                    2.0
                }
            }
            LossKind::ConcaveConvex(g) => g.evaluate(log1p_exp_neg(p)),
            LossKind::Constant { value } => *value,
        }
    }

    /// `T'(p)`; one-sided derivative at kinks (hinge takes `T'(1) = 0`).
    pub fn derivative(&self, p: f64) -> f64 {
        let p = p.clamp(-EVAL_CLAMP, EVAL_CLAMP);
        match &self.kind {
            LossKind::Exponential => -(-p).exp(),
            LossKind::TruncatedQuadratic => -2.0 * (1.0 - p).max(0.0),
            LossKind::Hinge => {
                if p < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Dwd { gamma } => {
                if p >= *gamma {
                    -1.0 / (p * p)
                } else {
                    -1.0 / (gamma * gamma)
                }
            }
            LossKind::ArcX4 { k } => {
                let t = 1.0 - p;
                -k * t.signum() * t.abs().powf(k - 1.0)
            }
            LossKind::Sigmoid { k } => {
                let th = (k * p).tanh();
                -k * (1.0 - th * th)
            }
            LossKind::Binomial => log1p_exp_neg_deriv(p),
            LossKind::SmoothedRamp => {
                if p >= 1.0 {
                    0.0
                } else if p >= 0.0 {
                    -2.0 * (1.0 - p)
                } else if p >= -1.0 {
                    -2.0 * (1.0 + p)
                } else {
                    0.0
                }
            }
            LossKind::ConcaveConvex(g) => {
                g.supergradient(log1p_exp_neg(p)) * log1p_exp_neg_deriv(p)
            }
            LossKind::Constant { .. } => 0.0,
        }
    }
}

/// Build a catalog loss from its name and a parameter map.
///
/// Names: `exponential`, `truncated_quadratic`, `hinge`, `dwd` (needs
/// `gamma`), `arcx4` (needs `k`), `sigmoid` (needs `k`), `binomial`,
/// `smoothed_ramp`.
pub fn make_builtin_loss(name: &str, params: &BTreeMap<String, f64>) -> Result<LossSpec, LossError> {
    let need = |key: &str| {
        params.get(key).copied().ok_or_else(|| LossError::MissingParameter {
            loss: name.to_string(),
            param: key.to_string(),
        })
    };
    match name {
        "exponential" => Ok(LossSpec::exponential()),
        "truncated_quadratic" => Ok(LossSpec::truncated_quadratic()),
        "hinge" => Ok(LossSpec::hinge()),
        "dwd" => LossSpec::dwd(need("gamma")?),
        "arcx4" => LossSpec::arcx4(need("k")?),
        "sigmoid" => LossSpec::sigmoid(need("k")?),
        "binomial" => Ok(LossSpec::binomial()),
        "smoothed_ramp" => Ok(LossSpec::smoothed_ramp()),
        other => Err(LossError::UnknownName(other.to_string())),
    }
}

/// Robust composition `T = g o s`; the config-file spelling is
/// `loss = "cc:tcave"` with a `sigma_sq` entry.
pub fn compose_cc(g: ConcaveComponent) -> LossSpec {
    LossSpec::concave_convex(g)
}

/// Resolve a loss from a config-style name: either a catalog name or
/// `cc:<family>` with `sigma_sq` (or `sigma`, which is squared) in `params`.
pub fn loss_from_config(name: &str, params: &BTreeMap<String, f64>) -> Result<LossSpec, LossError> {
    if let Some(fam_name) = name.strip_prefix("cc:") {
        let family = ConcaveFamily::parse(fam_name)
            .ok_or_else(|| LossError::UnknownName(name.to_string()))?;
        let sigma_sq = match (params.get("sigma_sq"), params.get("sigma")) {
            (Some(&s2), _) => s2,
            (None, Some(&s)) => s * s,
            (None, None) => {
                return Err(LossError::MissingParameter {
                    loss: name.to_string(),
                    param: "sigma_sq".to_string(),
                })
            }
        };
        Ok(compose_cc(ConcaveComponent::new(family, sigma_sq)?))
    } else {
        make_builtin_loss(name, params)
    }
}
