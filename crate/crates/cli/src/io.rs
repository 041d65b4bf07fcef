//! Dataset CSV and saved-rule JSON formats.
//!
//! Dataset CSV: header `x1..xm,a,r[,pi]`, comma-separated, `.` decimal,
//! UTF-8. The propensity column is optional and defaults to `0.5` (the
//! two-arm balanced design). The oracle sidecar carries
//! `tau,xi,dstar,mu_gap`.
//!
//! A saved rule bundles the kernel expansion with the optional residual
//! model and the optional standardization applied at training time, so
//! scoring new covariates reproduces the training-time pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use owl_core::rwl::ResidualModel;
use owl_core::{FittedRule, OracleInfo, PointMatrix, TrialDataset};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error("json: {0}")]
    Json(String),
    #[error("dataset: {0}")]
    Data(String),
}

/// Column standardization fitted on training statistics. Covariates are
/// always standardized; the outcome only on the residual path (the
/// outcome-weighted path requires nonnegative rewards).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub r_mean: Option<f64>,
    pub r_sd: Option<f64>,
}

impl Standardizer {
    pub fn fit(data: &TrialDataset, standardize_outcome: bool) -> Self {
        let n = data.n() as f64;
        let m = data.dim();
        let mut x_mean = vec![0.0; m];
        let mut x_sd = vec![0.0; m];
        for i in 0..data.n() {
            for (j, &x) in data.point(i).iter().enumerate() {
                x_mean[j] += x;
            }
        }
        x_mean.iter_mut().for_each(|v| *v /= n);
        for i in 0..data.n() {
            for (j, &x) in data.point(i).iter().enumerate() {
                x_sd[j] += (x - x_mean[j]) * (x - x_mean[j]);
            }
        }
        for v in &mut x_sd {
            *v = (*v / (n - 1.0).max(1.0)).sqrt();
            if *v == 0.0 {
                *v = 1.0;
            }
        }
        let (r_mean, r_sd) = if standardize_outcome {
            let mean = data.rewards().iter().sum::<f64>() / n;
            let var = data.rewards().iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
                / (n - 1.0).max(1.0);
            (Some(mean), Some(var.sqrt().max(1e-12)))
        } else {
            (None, None)
        };
        Standardizer { x_mean, x_sd, r_mean, r_sd }
    }

    pub fn transform_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.x_mean.iter().zip(&self.x_sd)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn transform(&self, data: &TrialDataset) -> Result<TrialDataset, IoError> {
        let rows: Vec<Vec<f64>> =
            (0..data.n()).map(|i| self.transform_point(data.point(i))).collect();
        let rewards: Vec<f64> = match (self.r_mean, self.r_sd) {
            (Some(m), Some(s)) => data.rewards().iter().map(|r| (r - m) / s).collect(),
            _ => data.rewards().to_vec(),
        };
        let cov = PointMatrix::from_rows(rows).map_err(|e| IoError::Data(e.to_string()))?;
        TrialDataset::new(cov, data.treatments().to_vec(), rewards, data.propensities().to_vec())
            .map_err(|e| IoError::Data(e.to_string()))
    }
}

/// A rule plus everything needed to apply it to raw covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedRule {
    pub rule: FittedRule,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual_model: Option<ResidualModel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub standardizer: Option<Standardizer>,
}

impl SavedRule {
    pub fn score(&self, x: &[f64]) -> Result<f64, IoError> {
        let x = match &self.standardizer {
            Some(s) => s.transform_point(x),
            None => x.to_vec(),
        };
        self.rule.score(&x).map_err(|e| IoError::Data(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| IoError::Json(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| IoError::Json(e.to_string()))
    }
}

pub fn write_dataset_csv(path: &Path, data: &TrialDataset) -> Result<(), IoError> {
    let mut out = String::new();
    for j in 1..=data.dim() {
        out.push_str(&format!("x{j},"));
    }
    out.push_str("a,r,pi\n");
    for i in 0..data.n() {
        for x in data.point(i) {
            out.push_str(&format!("{x},"));
        }
        out.push_str(&format!(
            "{},{},{}\n",
            data.treatments()[i],
            data.rewards()[i],
            data.propensities()[i]
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_oracle_csv(path: &Path, data: &TrialDataset) -> Result<(), IoError> {
    let oracle = data.oracle().ok_or_else(|| IoError::Data("dataset has no oracle".into()))?;
    let mut out = String::from("tau,xi,dstar,mu_gap\n");
    for i in 0..data.n() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            oracle.tau[i], oracle.xi[i], oracle.dstar[i], oracle.mu_gap[i]
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a dataset CSV, optionally pairing it with an oracle sidecar.
pub fn read_dataset_csv(path: &Path, oracle_path: Option<&Path>) -> Result<TrialDataset, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IoError::Csv("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let m = cols.iter().filter(|c| c.starts_with('x')).count();
    let a_idx = cols
        .iter()
        .position(|c| *c == "a")
        .ok_or_else(|| IoError::Csv("missing column `a`".into()))?;
    let r_idx = cols
        .iter()
        .position(|c| *c == "r")
        .ok_or_else(|| IoError::Csv("missing column `r`".into()))?;
    let pi_idx = cols.iter().position(|c| *c == "pi");

    let mut rows = Vec::new();
    let mut treatments = Vec::new();
    let mut rewards = Vec::new();
    let mut propensities = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| IoError::Csv(format!("line {}: {e}", lineno + 2)))
        };
        let mut x = Vec::with_capacity(m);
        for f in fields.iter().take(m) {
            x.push(parse(f)?);
        }
        rows.push(x);
        treatments.push(parse(fields[a_idx])?);
        rewards.push(parse(fields[r_idx])?);
        propensities.push(match pi_idx {
            Some(i) => parse(fields[i])?,
            None => 0.5,
        });
    }
    let cov = PointMatrix::from_rows(rows).map_err(|e| IoError::Data(e.to_string()))?;
    let data = TrialDataset::new(cov, treatments, rewards, propensities)
        .map_err(|e| IoError::Data(e.to_string()))?;

    match oracle_path {
        None => Ok(data),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let mut tau = Vec::new();
            let mut xi = Vec::new();
            let mut dstar = Vec::new();
            let mut mu_gap = Vec::new();
            for (lineno, line) in text.lines().skip(1).enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let f: Vec<&str> = line.split(',').collect();
                let parse = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|e| IoError::Csv(format!("oracle line {}: {e}", lineno + 2)))
                };
                tau.push(parse(f[0])?);
                xi.push(parse(f[1])?);
                dstar.push(parse(f[2])?);
                mu_gap.push(parse(f[3])?);
            }
            data.with_oracle(OracleInfo { tau, xi, dstar, mu_gap })
                .map_err(|e| IoError::Data(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use owl_core::simgen::{self, ScenarioSpec};

    #[test]
    fn dataset_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ScenarioSpec {
            example_id: 2,
            smooth: true,
            n: 40,
            m: 5,
            contamination_rate: 0.0,
            seed: 3,
        };
        let data = simgen::generate(&spec).unwrap();
        let data_path = dir.path().join("data.csv");
        let oracle_path = dir.path().join("oracle.csv");
        write_dataset_csv(&data_path, &data).unwrap();
        write_oracle_csv(&oracle_path, &data).unwrap();
        let back = read_dataset_csv(&data_path, Some(&oracle_path)).unwrap();
        assert_eq!(back.n(), data.n());
        assert_eq!(back.dim(), data.dim());
        for i in 0..data.n() {
            assert_eq!(back.point(i), data.point(i));
            assert_eq!(back.rewards()[i], data.rewards()[i]);
        }
        assert_eq!(back.oracle(), data.oracle());
    }

    #[test]
    fn missing_pi_defaults_to_half() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "x1,a,r\n0.5,1,2.0\n-0.5,-1,1.0\n").unwrap();
        let data = read_dataset_csv(&path, None).unwrap();
        assert_eq!(data.propensities(), &[0.5, 0.5]);
    }

    #[test]
    fn standardizer_round_trip_through_saved_rule() {
        let spec = ScenarioSpec {
            example_id: 2,
            smooth: true,
            n: 30,
            m: 5,
            contamination_rate: 0.0,
            seed: 4,
        };
        let data = simgen::generate(&spec).unwrap();
        let std = Standardizer::fit(&data, true);
        let transformed = std.transform(&data).unwrap();
        // Standardized columns have mean ~0 and sd ~1.
        for j in 0..data.dim() {
            let col: Vec<f64> = (0..data.n()).map(|i| transformed.point(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-10);
        }
        let mean_r = transformed.rewards().iter().sum::<f64>() / data.n() as f64;
        assert!(mean_r.abs() < 1e-10);

        let fit = owl_core::fit::fit_convex_owl(
            &owl_core::rwl::residual_transform(
                &transformed,
                &owl_core::rwl::compute_residuals(
                    &owl_core::rwl::fit_residual_model(&transformed).unwrap(),
                    &transformed,
                )
                .unwrap(),
            )
            .unwrap(),
            &owl_core::LossSpec::binomial(),
            &owl_core::KernelSpec::gaussian(1.0).unwrap(),
            1.0,
            &Default::default(),
        )
        .unwrap();
        let saved = SavedRule {
            rule: fit.rule.clone(),
            residual_model: None,
            standardizer: Some(std.clone()),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rule.json");
        saved.save(&path).unwrap();
        let loaded = SavedRule::load(&path).unwrap();
        // Scoring raw covariates through the saved rule equals scoring
        // standardized covariates through the bare rule.
        let raw = data.point(0);
        let direct = fit.rule.score(&std.transform_point(raw)).unwrap();
        assert!((loaded.score(raw).unwrap() - direct).abs() < 1e-12);
    }
}
