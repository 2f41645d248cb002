//! Experiment result tables, CSV emission, and run manifests.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One (sweep point, method) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub sweep: f64,
    pub method: String,
    pub mean_nmse: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Reproduction metadata: the digest plus seed pin every random draw.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub experiment: String,
    pub seed: u64,
    pub config_digest: String,
    /// Unix seconds at run start (not part of the CSV, which must be
    /// byte-identical across reruns).
    pub timestamp_unix: u64,
    pub crate_version: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub manifest: RunManifest,
}

impl ExperimentResult {
    /// Rows of one method, sweep-ascending.
    pub fn method_rows(&self, method: &str) -> Vec<&ResultRow> {
        let mut rows: Vec<&ResultRow> =
            self.rows.iter().filter(|r| r.method == method).collect();
        rows.sort_by(|a, b| a.sweep.total_cmp(&b.sweep));
        rows
    }

    /// The row at a given sweep value for a method.
    pub fn cell(&self, sweep: f64, method: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.sweep == sweep)
    }

    /// Smallest sweep value at which the method's column reaches `level`
    /// (reads a CDF table: `mean_nmse` holds the cumulative fraction).
    pub fn quantile_from_cdf(&self, method: &str, level: f64) -> Option<f64> {
        self.method_rows(method)
            .into_iter()
            .find(|r| r.mean_nmse >= level)
            .map(|r| r.sweep)
    }
}

pub fn manifest_now(experiment: impl Into<String>, seed: u64, config_toml: &str) -> RunManifest {
    let mut hasher = Sha256::new();
    hasher.update(config_toml.as_bytes());
    let digest = hasher.finalize();
    RunManifest {
        experiment: experiment.into(),
        seed,
        config_digest: format!("{digest:x}"),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn fmt_csv_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// Writes `sweep,method,mean_nmse,stderr,trials,seed` with rows ordered by
/// ascending sweep value then method name; deterministic bytes for a given
/// result.
pub fn emit_csv(result: &ExperimentResult, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_csv(result))?;
    Ok(())
}

pub fn render_csv(result: &ExperimentResult) -> String {
    let mut rows = result.rows.clone();
    rows.sort_by(|a, b| a.sweep.total_cmp(&b.sweep).then(a.method.cmp(&b.method)));
    let mut out = String::from("sweep,method,mean_nmse,stderr,trials,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_csv_f64(r.sweep),
            r.method,
            fmt_csv_f64(r.mean_nmse),
            fmt_csv_f64(r.stderr),
            r.trials,
            result.manifest.seed
        ));
    }
    out
}

/// Parses a file produced by [`emit_csv`] back into rows.
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("CSV", "empty file"))?;
    if header != "sweep,method,mean_nmse,stderr,trials,seed" {
        return Err(Error::format("CSV", format!("unexpected header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::format("CSV", format!("row {i} has {} fields", fields.len())));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::format("CSV", format!("bad number `{s}`")))
        };
        rows.push(ResultRow {
            sweep: parse_f(fields[0])?,
            method: fields[1].to_string(),
            mean_nmse: parse_f(fields[2])?,
            stderr: parse_f(fields[3])?,
            trials: fields[4]
                .parse()
                .map_err(|_| Error::format("CSV", "bad trial count"))?,
        });
    }
    Ok(rows)
}

/// Writes the run manifest next to the CSV.
pub fn write_manifest(result: &ExperimentResult, path: impl AsRef<Path>) -> Result<()> {
    let m = &result.manifest;
    let text = format!(
        "experiment = \"{}\"\nseed = {}\nconfig_digest = \"{}\"\ntimestamp_unix = {}\ncrate_version = \"{}\"\n",
        m.experiment, m.seed, m.config_digest, m.timestamp_unix, m.crate_version
    );
    fs::write(path, text)?;
    Ok(())
}

/// Mean and standard error of a sample.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}
