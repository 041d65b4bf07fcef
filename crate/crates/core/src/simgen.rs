//! Seeded synthetic trial generators with oracle targets, outlier
//! contamination, and treatment flipping.
//!
//! Covariates are uniform on `[-1, 1]`, treatments are balanced coin flips
//! (`pi = 1/2` by design), and rewards follow the scenario's outcome model:
//! log-normal for scenario 1 (so rewards stay positive for the
//! outcome-weighted path) and Gaussian for scenarios 2–5 (signed rewards,
//! residual path). Row `i` draws from its own random stream, so datasets of
//! different sizes under one seed are nested and generation order is
//! irrelevant.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::data::{OracleInfo, PointMatrix, TrialDataset};
use crate::fit::decision_sign;
use crate::seeding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown example id {0}; expected 1..=5")]
    UnknownExample(u8),
    #[error("example {example} does not support m = {m} covariates")]
    InvalidDimension { example: u8, m: usize },
    #[error("rate = {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("contamination requires oracle information")]
    MissingOracle,
}

/// Stream purposes for the per-row generators.
mod purpose {
    pub const COVARIATES: u64 = 1;
    pub const TREATMENT: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const CONTAMINATE_SELECT: u64 = 4;
    pub const CONTAMINATE_REDRAW: u64 = 5;
    pub const FLIP_SELECT: u64 = 6;
}

/// A simulation scenario: which example, its dimensions, and the seed.
/// `smooth` only distinguishes the two scenario-1 targets; scenarios 2–5
/// fix their own smoothness. `contamination_rate` is carried for runners;
/// [`generate`] itself always produces clean data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub example_id: u8,
    pub smooth: bool,
    pub n: usize,
    pub m: usize,
    pub contamination_rate: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        match self.example_id {
            1 => {
                if self.m != 1 {
                    return Err(SimError::InvalidDimension { example: 1, m: self.m });
                }
            }
            2..=5 => {
                if self.m != 5 && self.m != 50 {
                    return Err(SimError::InvalidDimension { example: self.example_id, m: self.m });
                }
            }
            other => return Err(SimError::UnknownExample(other)),
        }
        if !(0.0..1.0).contains(&self.contamination_rate) {
            return Err(SimError::InvalidRate(self.contamination_rate));
        }
        Ok(())
    }
}

/// Baseline and interaction effects `(tau(x), xi(x))` for a scenario.
pub fn oracle_at(example_id: u8, smooth: bool, x: &[f64]) -> (f64, f64) {
    let four_pi = 4.0 * std::f64::consts::PI;
    match example_id {
        1 => {
            let t = x[0];
            let xi = if smooth { (four_pi * t).sin() } else { decision_sign((four_pi * t).sin()) };
            (t, xi)
        }
        2 => {
            let tau = 1.0 + x[0] + x[1] + 2.0 * x[2] + 0.5 * x[3];
            let xi = 0.146 + (four_pi * x[0]).sin() + x[1] * x[1];
            (tau, xi)
        }
        3 => {
            let tau = 1.0 + x[0] + x[1] + 2.0 * x[2] + 0.5 * x[3];
            let xi = decision_sign(0.146 + (four_pi * x[0]).sin() + x[1] * x[1]);
            (tau, xi)
        }
        4 => {
            let tau =
                1.0 + x[0] * x[0] + x[1] * x[1] + 2.0 * x[2] * x[2] + 0.5 * x[3] * x[3];
            let xi = 3.8 * (0.8 - x[0] * x[0] - x[1] * x[1]);
            (tau, xi)
        }
        5 => {
            let tau =
                1.0 + x[0] * x[0] + x[1] * x[1] + 2.0 * x[2] * x[2] + 0.5 * x[3] * x[3];
            let xi = decision_sign(0.8 - x[0] * x[0] - x[1] * x[1]);
            (tau, xi)
        }
        other => panic!("unknown example id {other}"),
    }
}

fn lognormal_outcome(example_id: u8) -> bool {
    example_id == 1
}

/// Conditional-mean gap `|mu_1 - mu_{-1}|` at `(tau, xi)`. Gaussian
/// outcomes give `2 |xi|`; the log-normal scenario gives
/// `e^{tau + 1/2} |e^xi - e^{-xi}|`.
fn mu_gap(example_id: u8, tau: f64, xi: f64) -> f64 {
    if lognormal_outcome(example_id) {
        (tau + 0.5).exp() * (xi.exp() - (-xi).exp()).abs()
    } else {
        2.0 * xi.abs()
    }
}

/// Draw a scenario dataset with oracle columns.
pub fn generate(spec: &ScenarioSpec) -> Result<TrialDataset, SimError> {
    spec.validate()?;
    let n = spec.n;
    let mut rows = Vec::with_capacity(n);
    let mut treatments = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut tau_col = Vec::with_capacity(n);
    let mut xi_col = Vec::with_capacity(n);
    let mut dstar = Vec::with_capacity(n);
    let mut gaps = Vec::with_capacity(n);

    for i in 0..n {
        let mut rx = seeding::row_rng(spec.seed, purpose::COVARIATES, i as u64);
        let x: Vec<f64> = (0..spec.m).map(|_| rx.gen::<f64>() * 2.0 - 1.0).collect();

        let mut ra = seeding::row_rng(spec.seed, purpose::TREATMENT, i as u64);
        let a = if ra.gen::<f64>() < 0.5 { 1.0 } else { -1.0 };

        let (tau, xi) = oracle_at(spec.example_id, spec.smooth, &x);
        let mut re = seeding::row_rng(spec.seed, purpose::NOISE, i as u64);
        let eps: f64 = re.sample(StandardNormal);
        let mean = tau + xi * a;
        let r = if lognormal_outcome(spec.example_id) { (mean + eps).exp() } else { mean + eps };

        rows.push(x);
        treatments.push(a);
        rewards.push(r);
        tau_col.push(tau);
        xi_col.push(xi);
        dstar.push(decision_sign(xi));
        gaps.push(mu_gap(spec.example_id, tau, xi));
    }

    let covariates = PointMatrix::from_rows(rows).expect("rows are rectangular");
    let data = TrialDataset::new(covariates, treatments, rewards, vec![0.5; n])
        .expect("generated data is valid");
    Ok(data
        .with_oracle(OracleInfo { tau: tau_col, xi: xi_col, dstar, mu_gap: gaps })
        .expect("oracle columns match"))
}

/// Choose `k` distinct indices from `0..n` by partial Fisher–Yates.
fn choose_indices(n: usize, k: usize, mut rng: impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx
}

/// Redraw `floor(rate * n)` rewards from the decision-inverted outcome
/// model `N(tau - xi a, 1)`. Covariates, treatments, and oracle columns are
/// untouched; affected rows are recorded on the dataset.
pub fn contaminate(data: &TrialDataset, rate: f64, seed: u64) -> Result<TrialDataset, SimError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(SimError::InvalidRate(rate));
    }
    let oracle = data.oracle().ok_or(SimError::MissingOracle)?.clone();
    let k = (rate * data.n() as f64).floor() as usize;
    let mut out = data.clone();
    if k == 0 {
        return Ok(out);
    }
    let chosen = choose_indices(
        data.n(),
        k,
        seeding::stream_rng(seed, purpose::CONTAMINATE_SELECT),
    );
    for &i in &chosen {
        let mut rng = seeding::row_rng(seed, purpose::CONTAMINATE_REDRAW, i as u64);
        let eps: f64 = rng.sample(StandardNormal);
        let mean = oracle.tau[i] - oracle.xi[i] * data.treatments()[i];
        out.set_reward(i, mean + eps);
    }
    out.mark_contaminated(chosen);
    Ok(out)
}

/// Negate the treatment of `floor(rate * n)` rows; rewards unchanged.
/// Applying the same `(rate, seed)` twice restores the original data.
pub fn flip_treatments(data: &TrialDataset, rate: f64, seed: u64) -> TrialDataset {
    let k = (rate.clamp(0.0, 1.0) * data.n() as f64).floor() as usize;
    let mut out = data.clone();
    let chosen = choose_indices(data.n(), k, seeding::stream_rng(seed, purpose::FLIP_SELECT));
    for &i in &chosen {
        out.flip_treatment(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(example_id: u8, n: usize, m: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec { example_id, smooth: true, n, m, contamination_rate: 0.0, seed }
    }

    #[test]
    fn validation_rejects_bad_combinations() {
        assert!(spec(0, 10, 1, 1).validate().is_err());
        assert!(spec(6, 10, 5, 1).validate().is_err());
        assert!(spec(1, 10, 2, 1).validate().is_err());
        assert!(spec(2, 10, 7, 1).validate().is_err());
        assert!(spec(2, 10, 5, 1).validate().is_ok());
        assert!(spec(5, 10, 50, 1).validate().is_ok());
    }

    #[test]
    fn scenario_one_rewards_are_positive() {
        let data = generate(&spec(1, 500, 1, 42)).unwrap();
        assert!(data.rewards().iter().all(|&r| r > 0.0));
    }

    #[test]
    fn oracle_hand_values() {
        let (_, xi) = oracle_at(3, false, &[0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(xi, 1.0, "sign(0.146) = +1");
        let (tau, xi) = oracle_at(4, false, &[0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(tau, 1.0);
        assert!((xi - 3.04).abs() < 1e-12, "3.8 * 0.8 = 3.04");
    }

    #[test]
    fn oracle_sign_convention_holds_on_generated_rows() {
        let data = generate(&spec(2, 300, 5, 7)).unwrap();
        let oracle = data.oracle().unwrap();
        for i in 0..data.n() {
            assert_eq!(oracle.dstar[i], decision_sign(oracle.xi[i]));
            assert!((oracle.mu_gap[i] - 2.0 * oracle.xi[i].abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic_and_nested() {
        let a = generate(&spec(2, 50, 5, 99)).unwrap();
        let b = generate(&spec(2, 50, 5, 99)).unwrap();
        assert_eq!(a, b);

        let big = generate(&spec(2, 200, 5, 99)).unwrap();
        for i in 0..50 {
            assert_eq!(a.point(i), big.point(i));
            assert_eq!(a.treatments()[i], big.treatments()[i]);
            assert_eq!(a.rewards()[i], big.rewards()[i]);
        }

        let other = generate(&spec(2, 50, 5, 100)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn noise_distribution_matches_outcome_model() {
        let n = 100_000;
        let data = generate(&spec(2, n, 5, 11)).unwrap();
        let oracle = data.oracle().unwrap();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let z = data.rewards()[i] - (oracle.tau[i] + oracle.xi[i] * data.treatments()[i]);
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se = 1.0 / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "noise mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "noise variance {var}");
    }

    #[test]
    fn treatments_are_balanced() {
        let data = generate(&spec(3, 100_000, 5, 13)).unwrap();
        let pos = data.treatments().iter().filter(|&&a| a == 1.0).count();
        let frac = pos as f64 / data.n() as f64;
        assert!((frac - 0.5).abs() < 0.01, "P(A=1) = {frac}");
        assert!(data.propensities().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn contamination_touches_exactly_the_floor_count() {
        let data = generate(&spec(2, 100, 5, 21)).unwrap();
        let same = contaminate(&data, 0.0, 5).unwrap();
        assert_eq!(data, same);

        let dirty = contaminate(&data, 0.05, 5).unwrap();
        assert_eq!(dirty.contaminated_rows().len(), 5);
        let changed: Vec<usize> = (0..data.n())
            .filter(|&i| data.rewards()[i] != dirty.rewards()[i])
            .collect();
        assert_eq!(changed, dirty.contaminated_rows());
        assert_eq!(data.treatments(), dirty.treatments());
        assert_eq!(data.covariates(), dirty.covariates());
        assert_eq!(data.oracle(), dirty.oracle());
    }

    #[test]
    fn contaminated_rewards_follow_the_inverted_model() {
        // Repeated contamination of a large sample: the redrawn rewards must
        // track tau - xi a with unit variance.
        let n = 50_000;
        let data = generate(&spec(2, n, 5, 23)).unwrap();
        let dirty = contaminate(&data, 0.5, 31).unwrap();
        let oracle = data.oracle().unwrap();
        let mut sum = 0.0;
        let mut count = 0.0;
        for &i in dirty.contaminated_rows() {
            let z = dirty.rewards()[i] - (oracle.tau[i] - oracle.xi[i] * data.treatments()[i]);
            sum += z;
            count += 1.0;
        }
        let mean = sum / count;
        assert!(mean.abs() < 3.0 / count.sqrt(), "redraw mean {mean}");
    }

    #[test]
    fn contamination_requires_oracle() {
        let data = generate(&spec(2, 20, 5, 1)).unwrap();
        let stripped = TrialDataset::new(
            data.covariates().clone(),
            data.treatments().to_vec(),
            data.rewards().to_vec(),
            data.propensities().to_vec(),
        )
        .unwrap();
        assert!(matches!(contaminate(&stripped, 0.1, 1), Err(SimError::MissingOracle)));
    }

    #[test]
    fn flip_is_an_involution_and_counts_rows() {
        let data = generate(&spec(2, 400, 5, 29)).unwrap();
        let same = flip_treatments(&data, 0.0, 7);
        assert_eq!(data, same);

        let flipped = flip_treatments(&data, 0.10, 7);
        let n_changed = (0..data.n())
            .filter(|&i| data.treatments()[i] != flipped.treatments()[i])
            .count();
        assert_eq!(n_changed, 40);
        assert_eq!(data.rewards(), flipped.rewards());

        let all = flip_treatments(&data, 1.0, 7);
        let back = flip_treatments(&all, 1.0, 7);
        assert_eq!(data.treatments(), back.treatments());
    }

    #[test]
    fn lognormal_mu_gap_uses_the_exponential_moments() {
        let data = generate(
            &ScenarioSpec {
                example_id: 1,
                smooth: true,
                n: 10,
                m: 1,
                contamination_rate: 0.0,
                seed: 3,
            },
        )
        .unwrap();
        let oracle = data.oracle().unwrap();
        for i in 0..10 {
            let want = (oracle.tau[i] + 0.5).exp()
                * (oracle.xi[i].exp() - (-oracle.xi[i]).exp()).abs();
            assert!((oracle.mu_gap[i] - want).abs() < 1e-12);
        }
    }
}
