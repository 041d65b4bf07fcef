//! Trial data containers shared across the fitting, simulation, and
//! evaluation layers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("row {0} has {1} covariates, expected {2}")]
    RaggedRow(usize, usize, usize),
    #[error("column lengths disagree: {0}")]
    LengthMismatch(String),
    #[error("treatment[{0}] = {1}, must be -1 or +1")]
    InvalidTreatment(usize, f64),
    #[error("propensity[{0}] = {1}, must lie in (0, 1)")]
    InvalidPropensity(usize, f64),
    #[error("reward[{0}] = {1} is not finite")]
    NonFiniteReward(usize, f64),
    #[error("dataset has no oracle information")]
    MissingOracle,
}

/// Dense row-major point set; rows are covariate vectors. Row slices are
/// contiguous, which is what the kernel loops want.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl PointMatrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self, DataError> {
        if data.len() != rows * cols {
            return Err(DataError::LengthMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(DataError::RaggedRow(i, row.len(), m));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { data, rows: n, cols: m })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Column-major copy for linear algebra.
    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j])
    }
}

/// Ground truth carried by synthetic datasets: baseline effect `tau`,
/// interaction effect `xi`, the optimal assignment `dstar = sign(xi)` (with
/// `sign(0) = +1`), and the conditional-mean gap `|mu_1 - mu_{-1}|` used by
/// the excess-risk metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInfo {
    pub tau: Vec<f64>,
    pub xi: Vec<f64>,
    pub dstar: Vec<f64>,
    pub mu_gap: Vec<f64>,
}

/// One randomized-trial sample: covariates, assigned treatments in
/// `{-1, +1}`, rewards, and design propensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    covariates: PointMatrix,
    treatments: Vec<f64>,
    rewards: Vec<f64>,
    propensities: Vec<f64>,
    oracle: Option<OracleInfo>,
    /// Rows whose rewards were redrawn by the contamination generator.
    contaminated_rows: Vec<usize>,
}

impl TrialDataset {
    pub fn new(
        covariates: PointMatrix,
        treatments: Vec<f64>,
        rewards: Vec<f64>,
        propensities: Vec<f64>,
    ) -> Result<Self, DataError> {
        let n = covariates.rows();
        if treatments.len() != n || rewards.len() != n || propensities.len() != n {
            return Err(DataError::LengthMismatch(format!(
                "covariates {n}, treatments {}, rewards {}, propensities {}",
                treatments.len(),
                rewards.len(),
                propensities.len()
            )));
        }
        for (i, &a) in treatments.iter().enumerate() {
            if a != 1.0 && a != -1.0 {
                return Err(DataError::InvalidTreatment(i, a));
            }
        }
        for (i, &p) in propensities.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(DataError::InvalidPropensity(i, p));
            }
        }
        for (i, &r) in rewards.iter().enumerate() {
            if !r.is_finite() {
                return Err(DataError::NonFiniteReward(i, r));
            }
        }
        Ok(Self {
            covariates,
            treatments,
            rewards,
            propensities,
            oracle: None,
            contaminated_rows: Vec::new(),
        })
    }

    pub fn with_oracle(mut self, oracle: OracleInfo) -> Result<Self, DataError> {
        let n = self.n();
        if oracle.tau.len() != n
            || oracle.xi.len() != n
            || oracle.dstar.len() != n
            || oracle.mu_gap.len() != n
        {
            return Err(DataError::LengthMismatch("oracle columns".into()));
        }
        self.oracle = Some(oracle);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.covariates.rows()
    }

    pub fn dim(&self) -> usize {
        self.covariates.cols()
    }

    pub fn covariates(&self) -> &PointMatrix {
        &self.covariates
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.covariates.row(i)
    }

    pub fn treatments(&self) -> &[f64] {
        &self.treatments
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    pub fn oracle(&self) -> Option<&OracleInfo> {
        self.oracle.as_ref()
    }

    pub fn require_oracle(&self) -> Result<&OracleInfo, DataError> {
        self.oracle.as_ref().ok_or(DataError::MissingOracle)
    }

    pub fn contaminated_rows(&self) -> &[usize] {
        &self.contaminated_rows
    }

    pub fn is_contaminated(&self) -> bool {
        !self.contaminated_rows.is_empty()
    }

    /// Replace a single reward; used by the contamination generator.
    pub(crate) fn set_reward(&mut self, i: usize, r: f64) {
        self.rewards[i] = r;
    }

    pub(crate) fn mark_contaminated(&mut self, mut rows: Vec<usize>) {
        rows.sort_unstable();
        self.contaminated_rows = rows;
    }

    pub(crate) fn flip_treatment(&mut self, i: usize) {
        self.treatments[i] = -self.treatments[i];
    }

    /// Rebuild with new treatments/rewards, preserving covariates and oracle
    /// (the residual transform uses this).
    pub fn with_outcomes(
        &self,
        treatments: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self, DataError> {
        let mut d = TrialDataset::new(
            self.covariates.clone(),
            treatments,
            rewards,
            self.propensities.clone(),
        )?;
        d.oracle = self.oracle.clone();
        d.contaminated_rows = self.contaminated_rows.clone();
        Ok(d)
    }
}
