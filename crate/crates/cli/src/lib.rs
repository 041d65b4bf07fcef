//! Experiment runner, configuration, and result emission for the outcome
//! weighted learning toolkit. The `owl` binary is a thin wrapper over these
//! modules; integration and acceptance tests drive them directly.

pub mod config;
pub mod experiment;
pub mod io;
pub mod table;
