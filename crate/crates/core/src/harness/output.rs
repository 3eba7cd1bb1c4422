//! CSV files written by an experiment.
//!
//! One `<scheme>.csv` per scheme holds the averaged trace. `constants.csv`
//! holds the theory constants in long form and `summary.csv` one row per
//! scheme. Floats use Rust's shortest round-trip formatting, so reading a
//! file back reproduces the written values exactly.

use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::ExperimentResult;
use super::metrics::{to_db, Metric, SchemeTrace};
use crate::analysis::TheoryConstants;
use crate::error::{Error, Result};
use crate::federated::Scheme;

pub fn trace_path(dir: &Path, scheme: Scheme) -> PathBuf {
    dir.join(format!("{}.csv", scheme.name()))
}

/// Writes `<scheme>.csv` into `dir`, creating it if needed.
pub fn write_trace(dir: &Path, trace: &SchemeTrace, metric: Metric) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = trace_path(dir, trace.scheme);
    let mut w = csv::Writer::from_path(&path)?;
    match metric {
        Metric::Msd => {
            w.write_record(["iteration", "msd_linear", "msd_db"])?;
            for (i, v) in trace.mean.iter().enumerate() {
                w.write_record([(i + 1).to_string(), v.to_string(), to_db(*v).to_string()])?;
            }
        }
        Metric::TestError => {
            w.write_record(["iteration", "test_error_pct"])?;
            for (i, v) in trace.mean.iter().enumerate() {
                w.write_record([(i + 1).to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(path)
}

/// Reads the second column of a trace file.
pub fn read_trace(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line + 2,
            message,
        };
        let iteration: usize = rec
            .get(0)
            .ok_or_else(|| parse_err("missing iteration".into()))?
            .parse()
            .map_err(|e| parse_err(format!("iteration: {e}")))?;
        if iteration != out.len() + 1 {
            return Err(parse_err(format!("expected iteration {}, found {iteration}", out.len() + 1)));
        }
        let v: f64 = rec
            .get(1)
            .ok_or_else(|| parse_err("missing value".into()))?
            .parse()
            .map_err(|e| parse_err(format!("value: {e}")))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_constants(dir: &Path, constants: &[(Scheme, TheoryConstants)]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("constants.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["scheme", "quantity", "agent", "value"])?;
    for (scheme, c) in constants {
        let name = scheme.name();
        let mut global = |q: &str, v: f64| w.write_record([name, q, "", &v.to_string()]);
        global("nu", c.nu)?;
        global("delta", c.delta)?;
        if let Some(xi) = c.xi {
            global("xi", xi)?;
        }
        global("beta_s_sq", c.beta_s_sq)?;
        global("sigma_s_sq", c.sigma_s_sq)?;
        global("lambda", c.rates.lambda)?;
        global("mu_max", c.rates.mu_max)?;
        let per_agent: [(&str, &[f64]); 6] = [
            ("p_k", &c.agent_probs),
            ("beta_sk_sq", &c.beta_sk_sq),
            ("sigma_sk_sq", &c.sigma_sk_sq),
            ("sigma_qk_sq", &c.sigma_qk_sq),
            ("alpha_k", &c.alpha_k),
            ("lambda_k", &c.rates.lambda_k),
        ];
        for (q, values) in per_agent {
            for (k, v) in values.iter().enumerate() {
                w.write_record([name, q, &k.to_string(), &v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(path)
}

/// One row per scheme: steady state, and for the adaptive scheme the final
/// probability distances.
pub fn write_summary(dir: &Path, result: &ExperimentResult) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let metric = match result.trace.metric {
        Metric::Msd => "msd_db",
        Metric::TestError => "test_error_pct",
    };
    w.write_record([
        "scheme",
        "replacement",
        "iterations",
        "repetitions",
        "metric",
        "steady_state",
        "agent_distance",
        "data_distance",
    ])?;
    for t in &result.trace.schemes {
        let steady = t
            .steady_state()
            .map(|v| match result.trace.metric {
                Metric::Msd => to_db(v),
                Metric::TestError => v,
            })
            .map_or_else(String::new, |v| v.to_string());
        let (pa, pd) = t
            .distance
            .map_or((String::new(), String::new()), |d| (d.agents.to_string(), d.data.to_string()));
        w.write_record([
            t.scheme.name(),
            &t.replacement.to_string(),
            &result.trace.horizon.to_string(),
            &t.per_repetition.len().to_string(),
            metric,
            &steady,
            &pa,
            &pd,
        ])?;
    }
    w.flush()?;
    Ok(path)
}

/// Writes every file of `result` into `dir`.
pub fn write_result(dir: &Path, result: &ExperimentResult) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for t in &result.trace.schemes {
        paths.push(write_trace(dir, t, result.trace.metric)?);
    }
    if !result.constants.is_empty() {
        paths.push(write_constants(dir, &result.constants)?);
    }
    paths.push(write_summary(dir, result)?);
    Ok(paths)
}
