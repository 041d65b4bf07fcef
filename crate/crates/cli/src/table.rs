//! Result tables and their CSV/JSON/markdown emission.
//!
//! CSV and JSON carry the same rows and round-trip losslessly (floats are
//! written in shortest round-trip form). Wall-clock columns are excluded
//! unless explicitly requested, so the table of record is byte-reproducible
//! across worker counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv error: {0}")]
    Csv(String),
    #[error("json error: {0}")]
    Json(String),
}

/// One aggregated cell: a method under one scenario and contamination rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub scenario: String,
    pub contamination: f64,
    pub replicates: u64,
    /// Replicates that completed; fewer than `replicates` marks an
    /// incomplete cell (timeouts or failures), never an aborted run.
    pub n_complete: u64,
    pub mean_value: f64,
    pub sd_value: f64,
    pub mean_error: f64,
    pub sd_error: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_runtime_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

impl ResultTable {
    pub fn to_csv(&self, with_runtime: bool) -> String {
        let mut out = String::new();
        out.push_str("method,scenario,contamination,replicates,n_complete,mean_value,sd_value,mean_error,sd_error");
        if with_runtime {
            out.push_str(",mean_runtime_s");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}",
                r.method,
                r.scenario,
                fmt_f64(r.contamination),
                r.replicates,
                r.n_complete,
                fmt_f64(r.mean_value),
                fmt_f64(r.sd_value),
                fmt_f64(r.mean_error),
                fmt_f64(r.sd_error),
            ));
            if with_runtime {
                out.push(',');
                out.push_str(&fmt_f64(r.mean_runtime_s.unwrap_or(0.0)));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| TableError::Csv("empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let with_runtime = cols.last() == Some(&"mean_runtime_s");
        let expected = if with_runtime { 10 } else { 9 };
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != expected {
                return Err(TableError::Csv(format!(
                    "line {}: {} fields, expected {expected}",
                    lineno + 2,
                    f.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| TableError::Csv(format!("line {}: {e}", lineno + 2)))
            };
            rows.push(ResultRow {
                method: f[0].to_string(),
                scenario: f[1].to_string(),
                contamination: parse(f[2])?,
                replicates: f[3]
                    .parse()
                    .map_err(|e| TableError::Csv(format!("line {}: {e}", lineno + 2)))?,
                n_complete: f[4]
                    .parse()
                    .map_err(|e| TableError::Csv(format!("line {}: {e}", lineno + 2)))?,
                mean_value: parse(f[5])?,
                sd_value: parse(f[6])?,
                mean_error: parse(f[7])?,
                sd_error: parse(f[8])?,
                mean_runtime_s: if with_runtime { Some(parse(f[9])?) } else { None },
            });
        }
        Ok(ResultTable { rows })
    }

    pub fn to_json(&self) -> Result<String, TableError> {
        serde_json::to_string_pretty(self).map_err(|e| TableError::Json(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, TableError> {
        serde_json::from_str(text).map_err(|e| TableError::Json(e.to_string()))
    }

    /// Markdown table shaped like the comparison tables: one row per method,
    /// value/error pairs per contamination level, and a `best value at`
    /// column flagging where each method attains the column maximum.
    pub fn to_markdown(&self) -> String {
        let mut contaminations: Vec<f64> = self.rows.iter().map(|r| r.contamination).collect();
        contaminations.sort_by(f64::total_cmp);
        contaminations.dedup();
        let mut methods: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let find = |m: &str, c: f64| {
            self.rows.iter().find(|r| r.method == m && r.contamination == c)
        };
        let best_at: Vec<Option<String>> = contaminations
            .iter()
            .map(|&c| {
                methods
                    .iter()
                    .filter_map(|m| find(m, c).map(|r| (m.to_string(), r.mean_value)))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(m, _)| m)
            })
            .collect();

        let mut out = String::new();
        out.push_str("| Method |");
        for c in &contaminations {
            out.push_str(&format!(" {:.0}% Value (sd) | {:.0}% Error (sd) |", c * 100.0, c * 100.0));
        }
        out.push_str(" Best value at |\n|---|");
        for _ in &contaminations {
            out.push_str("---|---|");
        }
        out.push_str("---|\n");
        for m in &methods {
            out.push_str(&format!("| {m} |"));
            let mut flags = Vec::new();
            for (ci, &c) in contaminations.iter().enumerate() {
                match find(m, c) {
                    Some(r) if r.n_complete > 0 => {
                        out.push_str(&format!(
                            " {:.3} ({:.3}) | {:.3} ({:.3}) |",
                            r.mean_value, r.sd_value, r.mean_error, r.sd_error
                        ));
                        if best_at[ci].as_deref() == Some(*m) {
                            flags.push(format!("{:.0}%", c * 100.0));
                        }
                    }
                    Some(_) => out.push_str(" incomplete | incomplete |"),
                    None => out.push_str(" - | - |"),
                }
            }
            out.push_str(&format!(" {} |\n", if flags.is_empty() { "-".into() } else { flags.join(" ") }));
        }
        out
    }
}

/// Mean and sample standard deviation (n-1 denominator; 0 when n < 2).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
