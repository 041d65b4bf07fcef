//! Kernel evaluation and Gram-matrix assembly.
//!
//! Matérn kernels use the spectral-density parameterization with argument
//! `t = sqrt(2 alpha) d / rho`, so `alpha = 0.5` is the exponential kernel,
//! `alpha = 1.5` the once-differentiable Matérn, and `alpha -> inf` recovers
//! the Gaussian `exp(-d^2 / (2 rho^2))` at matched bandwidth. Half-integer
//! orders dispatch to closed forms; everything else goes through the
//! log-space Bessel evaluator in [`bessel`].

pub mod bessel;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::PointMatrix;
use crate::parallel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("covariate dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
}

/// Kernel family plus parameters. Matérn and Gaussian are bounded with
/// `k(x, x) = 1`; the linear kernel is the plain dot product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    Matern { alpha: f64, rho: f64 },
    Gaussian { rho: f64 },
    Linear,
}

impl KernelSpec {
    pub fn matern(alpha: f64, rho: f64) -> Result<Self, KernelError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("alpha = {alpha}, need alpha > 0")));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("rho = {rho}, need rho > 0")));
        }
        Ok(KernelSpec::Matern { alpha, rho })
    }

    pub fn gaussian(rho: f64) -> Result<Self, KernelError> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("rho = {rho}, need rho > 0")));
        }
        Ok(KernelSpec::Gaussian { rho })
    }

    pub fn linear() -> Self {
        KernelSpec::Linear
    }

    /// Kernel value between two covariate vectors.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        if x.len() != y.len() {
            return Err(KernelError::DimensionMismatch { left: x.len(), right: y.len() });
        }
        Ok(match *self {
            KernelSpec::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            KernelSpec::Gaussian { rho } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                let e = -d2 / (2.0 * rho * rho);
                // Cut off before the subnormal range; exp there is orders of
                // magnitude slower and the value is numerically zero anyway.
                if e < -700.0 {
                    0.0
                } else {
                    e.exp()
                }
            }
            KernelSpec::Matern { alpha, rho } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                matern_kernel_value(alpha, rho, d2.sqrt())
            }
        })
    }
}

/// Matérn kernel value at distance `d`, dispatching half-integer orders to
/// their closed forms.
pub fn matern_kernel_value(alpha: f64, rho: f64, d: f64) -> f64 {
    let t = (2.0 * alpha).sqrt() * d / rho;
    if t <= 1e-12 {
        return 1.0;
    }
    if t > 700.0 {
        return 0.0;
    }
    if alpha == 0.5 {
        (-t).exp()
    } else if alpha == 1.5 {
        (1.0 + t) * (-t).exp()
    } else if alpha == 2.5 {
        (1.0 + t + t * t / 3.0) * (-t).exp()
    } else {
        matern_bessel_form(alpha, rho, d)
    }
}

/// The general Bessel-based Matérn evaluation
/// `2^{1-alpha}/Gamma(alpha) t^alpha K_alpha(t)`, valid for any order.
/// Exposed so the closed forms can be validated against it.
pub fn matern_bessel_form(alpha: f64, rho: f64, d: f64) -> f64 {
    let t = (2.0 * alpha).sqrt() * d / rho;
    if t <= 1e-12 {
        return 1.0;
    }
    let ln_k = (1.0 - alpha) * std::f64::consts::LN_2
        - statrs::function::gamma::ln_gamma(alpha)
        + alpha * t.ln()
        + bessel::ln_bessel_k(alpha, t);
    ln_k.exp().min(1.0)
}

/// Convenience wrapper matching the operation signature used elsewhere.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    spec.eval(x, y)
}

/// Symmetric Gram matrix of a point set. Rows are assembled in parallel on
/// the upper triangle and mirrored.
pub fn gram_matrix(spec: &KernelSpec, points: &PointMatrix) -> Result<DMatrix<f64>, KernelError> {
    let n = points.rows();
    let rows: Vec<Result<Vec<f64>, KernelError>> = parallel::map_range(n, |i| {
        let xi = points.row(i);
        (i..n).map(|j| spec.eval(xi, points.row(j))).collect()
    });
    let mut g = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row?.into_iter().enumerate() {
            let j = i + off;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Cross-kernel matrix with entry `(i, j) = k(new_i, train_j)`.
pub fn cross_kernel(
    spec: &KernelSpec,
    train: &PointMatrix,
    new: &PointMatrix,
) -> Result<DMatrix<f64>, KernelError> {
    if train.cols() != new.cols() {
        return Err(KernelError::DimensionMismatch { left: train.cols(), right: new.cols() });
    }
    let (m, n) = (new.rows(), train.rows());
    let rows: Vec<Result<Vec<f64>, KernelError>> = parallel::map_range(m, |i| {
        let xi = new.row(i);
        (0..n).map(|j| spec.eval(xi, train.row(j))).collect()
    });
    let mut g = DMatrix::zeros(m, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            g[(i, j)] = v;
        }
    }
    Ok(g)
}
