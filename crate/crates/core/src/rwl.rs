//! Residual-weighted learning: a weighted least-squares outcome model, the
//! residual substitution, and the sign-split objective for signed rewards.
//!
//! The sign-split problem is exactly the outcome-weighted problem on
//! transformed data: weights `|rhat_i| / pi_i` and labels `t_i a_i`, where
//! `t_i = +1` when `rhat_i >= 0` and `-1` otherwise (a zero residual gets
//! `t_i = +1` and weight zero, so the point is inert either way). The
//! implementation passes through [`residual_transform`], so every
//! outcome-weighted code path and test covers this module too.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, TrialDataset};
use crate::fit::{self, FitError, FitOptions, FitOutcome};
use crate::kernels::KernelSpec;
use crate::losses::LossSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RwlError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("residual vector has length {got}, expected {expected}")]
    ResidualLength { got: usize, expected: usize },
    #[error("model has {got} slopes, data has {expected} covariates")]
    SlopeDimension { got: usize, expected: usize },
    #[error("weighted least squares solve failed: {0}")]
    SolveFailed(String),
}

/// Linear outcome model `r ~ beta0 + x' beta` fit by inverse-propensity
/// weighted least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualModel {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl ResidualModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Fit the outcome model by minimizing
/// `sum_i (1 / (2 pi_i)) (r_i - beta0 - x_i' beta)^2`.
///
/// Solved through an SVD of the weighted design, which also yields the
/// minimum-norm solution (with a warning) when the design is rank-deficient.
pub fn fit_residual_model(data: &TrialDataset) -> Result<ResidualModel, RwlError> {
    let n = data.n();
    let m = data.dim();
    let mut design = DMatrix::zeros(n, m + 1);
    let mut target = DVector::zeros(n);
    for i in 0..n {
        let w = (1.0 / (2.0 * data.propensities()[i])).sqrt();
        design[(i, 0)] = w;
        for (j, &x) in data.point(i).iter().enumerate() {
            design[(i, j + 1)] = w * x;
        }
        target[i] = w * data.rewards()[i];
    }
    let svd = design.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    let rank = svd.rank(eps);
    if rank < m + 1 {
        log::warn!(
            "residual design is rank-deficient ({rank} < {}); using the minimum-norm solution",
            m + 1
        );
    }
    let beta = svd.solve(&target, eps).map_err(|e| RwlError::SolveFailed(e.to_string()))?;
    Ok(ResidualModel { intercept: beta[0], slopes: beta.as_slice()[1..].to_vec() })
}

/// Residuals `rhat_i = r_i - beta0 - x_i' beta`.
pub fn compute_residuals(model: &ResidualModel, data: &TrialDataset) -> Result<Vec<f64>, RwlError> {
    if model.slopes.len() != data.dim() {
        return Err(RwlError::SlopeDimension { got: model.slopes.len(), expected: data.dim() });
    }
    Ok((0..data.n())
        .map(|i| data.rewards()[i] - model.predict(data.point(i)))
        .collect())
}

/// The reduction carrying the sign-split problem onto the outcome-weighted
/// machinery: rewards become `|rhat_i|`, treatments become `t_i a_i`.
pub fn residual_transform(
    data: &TrialDataset,
    residuals: &[f64],
) -> Result<TrialDataset, RwlError> {
    if residuals.len() != data.n() {
        return Err(RwlError::ResidualLength { got: residuals.len(), expected: data.n() });
    }
    let treatments = data
        .treatments()
        .iter()
        .zip(residuals)
        .map(|(&a, &r)| if r >= 0.0 { a } else { -a })
        .collect();
    let rewards = residuals.iter().map(|r| r.abs()).collect();
    Ok(data.with_outcomes(treatments, rewards)?)
}

/// Sign-split objective value; identical to the outcome-weighted objective
/// on the transformed data by construction.
#[allow(clippy::too_many_arguments)]
pub fn rwl_objective(
    v: &[f64],
    delta: f64,
    data: &TrialDataset,
    residuals: &[f64],
    loss: &LossSpec,
    gram: &DMatrix<f64>,
    lambda: f64,
    case_weights: Option<&[f64]>,
) -> Result<f64, RwlError> {
    let transformed = residual_transform(data, residuals)?;
    Ok(fit::owl_objective(v, delta, &transformed, loss, gram, lambda, case_weights)?)
}

/// Gradient of [`rwl_objective`].
#[allow(clippy::too_many_arguments)]
pub fn rwl_gradient(
    v: &[f64],
    delta: f64,
    data: &TrialDataset,
    residuals: &[f64],
    loss: &LossSpec,
    gram: &DMatrix<f64>,
    lambda: f64,
    case_weights: Option<&[f64]>,
) -> Result<(Vec<f64>, f64), RwlError> {
    let transformed = residual_transform(data, residuals)?;
    Ok(fit::owl_gradient(v, delta, &transformed, loss, gram, lambda, case_weights)?)
}

#[derive(Debug, Clone)]
pub struct RwlFit {
    pub outcome: FitOutcome,
    pub residual_model: ResidualModel,
    pub residuals: Vec<f64>,
}

/// Fit the sign-split problem for a convex loss: outcome model, residuals,
/// then the convex fitter on the transformed data.
pub fn fit_convex_rwl(
    data: &TrialDataset,
    loss: &LossSpec,
    kernel: &KernelSpec,
    lambda: f64,
    opts: &FitOptions,
) -> Result<RwlFit, RwlError> {
    let model = fit_residual_model(data)?;
    let residuals = compute_residuals(&model, data)?;
    let transformed = residual_transform(data, &residuals)?;
    let outcome = fit::fit_convex_owl(&transformed, loss, kernel, lambda, opts)?;
    Ok(RwlFit { outcome, residual_model: model, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PointMatrix;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn dataset(x: Vec<Vec<f64>>, a: Vec<f64>, r: Vec<f64>, pi: Vec<f64>) -> TrialDataset {
        TrialDataset::new(PointMatrix::from_rows(x).unwrap(), a, r, pi).unwrap()
    }

    fn random_signed_dataset(rng: &mut ChaCha12Rng, n: usize, m: usize) -> TrialDataset {
        let pts: Vec<Vec<f64>> =
            (0..n).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let a: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let pi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..0.8)).collect();
        dataset(pts, a, r, pi)
    }

    /// Gaussian-elimination solve of the weighted normal equations, kept
    /// deliberately independent of the SVD path it checks.
    fn normal_equations_oracle(data: &TrialDataset) -> Vec<f64> {
        let n = data.n();
        let m = data.dim() + 1;
        let mut ata = vec![vec![0.0; m]; m];
        let mut atb = vec![0.0; m];
        for i in 0..n {
            let w = 1.0 / (2.0 * data.propensities()[i]);
            let mut z = vec![1.0];
            z.extend_from_slice(data.point(i));
            for p in 0..m {
                for q in 0..m {
                    ata[p][q] += w * z[p] * z[q];
                }
                atb[p] += w * z[p] * data.rewards()[i];
            }
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..m {
            let piv = (col..m).max_by(|&a, &b| ata[a][col].abs().total_cmp(&ata[b][col].abs())).unwrap();
            ata.swap(col, piv);
            atb.swap(col, piv);
            for row in 0..m {
                if row != col {
                    let f = ata[row][col] / ata[col][col];
                    for k in col..m {
                        ata[row][k] -= f * ata[col][k];
                    }
                    atb[row] -= f * atb[col];
                }
            }
        }
        (0..m).map(|i| atb[i] / ata[i][i]).collect()
    }

    #[test]
    fn exact_linear_data_has_zero_residuals() {
        let data = dataset(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![1.0, -1.0, 1.0],
            vec![1.0, 2.0, 3.0],
            vec![0.5; 3],
        );
        let model = fit_residual_model(&data).unwrap();
        assert_relative_eq!(model.intercept, 1.0, epsilon = 1e-10);
        assert_relative_eq!(model.slopes[0], 1.0, epsilon = 1e-10);
        for r in compute_residuals(&model, &data).unwrap() {
            assert!(r.abs() < 1e-10);
        }
    }

    #[test]
    fn constant_rewards_fit_the_intercept() {
        let data = dataset(
            vec![vec![0.3, -0.2], vec![-0.7, 0.5], vec![0.1, 0.9], vec![0.6, 0.0]],
            vec![1.0, -1.0, 1.0, -1.0],
            vec![2.5; 4],
            vec![0.4, 0.6, 0.5, 0.3],
        );
        let model = fit_residual_model(&data).unwrap();
        assert_relative_eq!(model.intercept, 2.5, epsilon = 1e-9);
        for b in &model.slopes {
            assert!(b.abs() < 1e-9);
        }
    }

    #[test]
    fn two_points_interpolate() {
        let data = dataset(
            vec![vec![0.0], vec![2.0]],
            vec![1.0, -1.0],
            vec![1.0, 5.0],
            vec![0.3, 0.7],
        );
        let model = fit_residual_model(&data).unwrap();
        for r in compute_residuals(&model, &data).unwrap() {
            assert!(r.abs() < 1e-9);
        }
    }

    #[test]
    fn matches_independent_normal_equations_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..10 {
            let data = random_signed_dataset(&mut rng, 30, 3);
            let model = fit_residual_model(&data).unwrap();
            let oracle = normal_equations_oracle(&data);
            assert!((model.intercept - oracle[0]).abs() < 1e-8);
            for (b, o) in model.slopes.iter().zip(&oracle[1..]) {
                assert!((b - o).abs() < 1e-8, "{b} vs {o}");
            }
        }
    }

    #[test]
    fn normal_equations_residual_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(32);
        let data = random_signed_dataset(&mut rng, 40, 4);
        let model = fit_residual_model(&data).unwrap();
        let res = compute_residuals(&model, &data).unwrap();
        // sum_i rhat_i / (2 pi_i) * (1, x_i) = 0
        let mut s0 = 0.0;
        let mut sx = vec![0.0; data.dim()];
        for i in 0..data.n() {
            let w = 1.0 / (2.0 * data.propensities()[i]);
            s0 += w * res[i];
            for (j, &x) in data.point(i).iter().enumerate() {
                sx[j] += w * res[i] * x;
            }
        }
        assert!(s0.abs() < 1e-8, "intercept equation {s0}");
        for v in sx {
            assert!(v.abs() < 1e-8, "slope equation {v}");
        }
    }

    #[test]
    fn zero_model_returns_rewards_and_shift_is_absorbed() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let data = random_signed_dataset(&mut rng, 25, 2);
        let zero = ResidualModel { intercept: 0.0, slopes: vec![0.0; 2] };
        assert_eq!(compute_residuals(&zero, &data).unwrap(), data.rewards());

        let model = fit_residual_model(&data).unwrap();
        let res = compute_residuals(&model, &data).unwrap();
        let shifted = data
            .with_outcomes(
                data.treatments().to_vec(),
                data.rewards().iter().map(|r| r + 7.25).collect(),
            )
            .unwrap();
        let model2 = fit_residual_model(&shifted).unwrap();
        let res2 = compute_residuals(&model2, &shifted).unwrap();
        for (a, b) in res.iter().zip(&res2) {
            assert!((a - b).abs() < 1e-9, "shift changed residuals: {a} vs {b}");
        }
    }

    #[test]
    fn objective_reduces_to_owl_on_transformed_data() {
        let mut rng = ChaCha12Rng::seed_from_u64(34);
        let data = random_signed_dataset(&mut rng, 15, 2);
        let kernel = KernelSpec::gaussian(0.8).unwrap();
        let gram = crate::kernels::gram_matrix(&kernel, data.covariates()).unwrap();
        let model = fit_residual_model(&data).unwrap();
        let residuals = compute_residuals(&model, &data).unwrap();
        let loss = LossSpec::binomial();
        for _ in 0..20 {
            let v: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let delta: f64 = rng.gen_range(-1.0..1.0);
            let via_rwl =
                rwl_objective(&v, delta, &data, &residuals, &loss, &gram, 0.5, None).unwrap();
            let transformed = residual_transform(&data, &residuals).unwrap();
            let via_owl =
                fit::owl_objective(&v, delta, &transformed, &loss, &gram, 0.5, None).unwrap();
            assert!((via_rwl - via_owl).abs() <= 1e-12);
        }
    }

    #[test]
    fn sign_split_hand_value() {
        // rhat = -2, a = +1, pi = 0.5, v = 0, delta = 0:
        // (|rhat|/pi) T(-a*0) / n = 4 T(0) = 4 for the hinge.
        let data = dataset(vec![vec![0.0]], vec![1.0], vec![0.0], vec![0.5]);
        let gram = DMatrix::from_element(1, 1, 1.0);
        let got =
            rwl_objective(&[0.0], 0.0, &data, &[-2.0], &LossSpec::hinge(), &gram, 1.0, None)
                .unwrap();
        assert_relative_eq!(got, 4.0, epsilon = 1e-12);

        // rhat = -1 with a = +1 behaves exactly like rhat = +1 with a = -1.
        let d1 = dataset(vec![vec![0.0]], vec![1.0], vec![0.0], vec![0.5]);
        let d2 = dataset(vec![vec![0.0]], vec![-1.0], vec![0.0], vec![0.5]);
        for p in [-0.7, 0.0, 1.3] {
            let o1 =
                rwl_objective(&[p], 0.1, &d1, &[-1.0], &LossSpec::binomial(), &gram, 1.0, None)
                    .unwrap();
            let o2 =
                rwl_objective(&[p], 0.1, &d2, &[1.0], &LossSpec::binomial(), &gram, 1.0, None)
                    .unwrap();
            assert_relative_eq!(o1, o2, epsilon = 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(35);
        let data = random_signed_dataset(&mut rng, 10, 2);
        let kernel = KernelSpec::gaussian(0.8).unwrap();
        let gram = crate::kernels::gram_matrix(&kernel, data.covariates()).unwrap();
        let model = fit_residual_model(&data).unwrap();
        let residuals = compute_residuals(&model, &data).unwrap();
        let loss = LossSpec::binomial();
        let v: Vec<f64> = (0..10).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let delta = 0.2;
        let (gv, gd) =
            rwl_gradient(&v, delta, &data, &residuals, &loss, &gram, 0.4, None).unwrap();
        let h = 1e-6;
        for j in 0..10 {
            let mut vp = v.clone();
            vp[j] += h;
            let mut vm = v.clone();
            vm[j] -= h;
            let fp = rwl_objective(&vp, delta, &data, &residuals, &loss, &gram, 0.4, None).unwrap();
            let fm = rwl_objective(&vm, delta, &data, &residuals, &loss, &gram, 0.4, None).unwrap();
            assert!(((fp - fm) / (2.0 * h) - gv[j]).abs() <= 1e-5 * gv[j].abs().max(1.0));
        }
        let fp = rwl_objective(&v, delta + h, &data, &residuals, &loss, &gram, 0.4, None).unwrap();
        let fm = rwl_objective(&v, delta - h, &data, &residuals, &loss, &gram, 0.4, None).unwrap();
        assert!(((fp - fm) / (2.0 * h) - gd).abs() <= 1e-5 * gd.abs().max(1.0));
    }

    #[test]
    fn location_invariance_of_fitted_assignments() {
        let mut rng = ChaCha12Rng::seed_from_u64(36);
        let data = random_signed_dataset(&mut rng, 30, 2);
        let kernel = KernelSpec::gaussian(0.6).unwrap();
        let loss = LossSpec::binomial();
        let base = fit_convex_rwl(&data, &loss, &kernel, 0.5, &FitOptions::default()).unwrap();
        let shifted_data = data
            .with_outcomes(
                data.treatments().to_vec(),
                data.rewards().iter().map(|r| r + 11.0).collect(),
            )
            .unwrap();
        let shifted = fit_convex_rwl(&shifted_data, &loss, &kernel, 0.5, &FitOptions::default())
            .unwrap();
        for (a, b) in base.residuals.iter().zip(&shifted.residuals) {
            assert!((a - b).abs() < 1e-8);
        }
        let grid = PointMatrix::from_rows(
            (0..50).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect(),
        )
        .unwrap();
        assert_eq!(
            base.outcome.rule.assign_batch(&grid).unwrap(),
            shifted.outcome.rule.assign_batch(&grid).unwrap()
        );
    }

    #[test]
    fn symmetric_two_point_problem_centers_the_bias() {
        // Mirrored covariates, opposite residual signs, equal magnitudes.
        let data = dataset(
            vec![vec![0.5], vec![-0.5]],
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![0.5, 0.5],
        );
        let residuals = [1.0, -1.0];
        let transformed = residual_transform(&data, &residuals).unwrap();
        let kernel = KernelSpec::gaussian(0.7).unwrap();
        let fitted = fit::fit_convex_owl(
            &transformed,
            &LossSpec::binomial(),
            &kernel,
            0.2,
            &FitOptions::default(),
        )
        .unwrap();
        assert!(fitted.rule.bias().abs() < 1e-6, "bias = {}", fitted.rule.bias());
        let s_pos = fitted.rule.score(&[0.5]).unwrap();
        let s_neg = fitted.rule.score(&[-0.5]).unwrap();
        assert_relative_eq!(s_pos, -s_neg, epsilon = 1e-6);
    }

    #[test]
    fn scaling_rewards_and_lambda_preserves_assignments() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let data = random_signed_dataset(&mut rng, 25, 2);
        let kernel = KernelSpec::gaussian(0.6).unwrap();
        let loss = LossSpec::binomial();
        let base = fit_convex_rwl(&data, &loss, &kernel, 0.5, &FitOptions::default()).unwrap();
        let c = 2.5;
        let scaled_data = data
            .with_outcomes(
                data.treatments().to_vec(),
                data.rewards().iter().map(|r| c * r).collect(),
            )
            .unwrap();
        let scaled =
            fit_convex_rwl(&scaled_data, &loss, &kernel, 0.5 * c, &FitOptions::default()).unwrap();
        let grid = PointMatrix::from_rows(
            (0..50).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect(),
        )
        .unwrap();
        assert_eq!(
            base.outcome.rule.assign_batch(&grid).unwrap(),
            scaled.outcome.rule.assign_batch(&grid).unwrap()
        );
    }
}
