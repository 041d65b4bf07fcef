//! Kernel-based outcome weighted learning (OWL) for individualized treatment
//! rules.
//!
//! The crate has three layers:
//!
//! * **Loss calibration** — a catalog of convex and robust concave–convex
//!   surrogate losses ([`losses`]), together with a numerical engine for the
//!   conditional risks and the variational risk transform that relates excess
//!   surrogate risk to excess 0–1 risk ([`calibration`]).
//! * **Estimation** — Matérn/Gaussian/linear kernels ([`kernels`]), the
//!   regularized weighted-surrogate objective in representer coordinates with
//!   an L-BFGS solver ([`fit`]), residual-weighted learning for signed
//!   rewards ([`rwl`]), and iteratively reweighted convex optimization for
//!   the nonconvex robust losses ([`irco`]).
//! * **Experiments** — seeded synthetic trial generators with oracle targets
//!   and outlier contamination ([`simgen`]), plus value/misclassification
//!   metrics and grid-search tuning ([`evaluate`]).
//!
//! All randomness flows through per-row counter-style streams
//! ([`seeding`]), so any result is reproducible bit-for-bit regardless of
//! thread count. Data-parallel loops use rayon when the `parallel` feature
//! (default) is enabled and fall back to sequential iteration otherwise.

pub mod calibration;
pub mod data;
pub mod evaluate;
pub mod fit;
pub mod irco;
pub mod kernels;
pub mod lbfgs;
pub mod losses;
pub mod parallel;
pub mod rwl;
pub mod seeding;
pub mod simgen;

pub use data::{OracleInfo, PointMatrix, TrialDataset};
pub use fit::{FitOptions, FitReport, FittedRule};
pub use kernels::KernelSpec;
pub use losses::{ConcaveComponent, ConcaveFamily, LossSpec};
