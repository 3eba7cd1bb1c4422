use crate::error::{Error, Result};
use crate::federated::Scheme;
use crate::problems::AgentDataset;
use crate::sampling::Replacement;

/// Lowest value written for an MSD in dB; `10·log10(0)` would be `-inf`.
pub const DB_FLOOR: f64 = -320.0;

/// `‖w − w_opt‖²`.
pub fn msd(w: &[f64], w_opt: &[f64]) -> Result<f64> {
    if w.len() != w_opt.len() {
        return Err(Error::DimensionMismatch {
            expected: w_opt.len(),
            found: w.len(),
        });
    }
    Ok(w.iter().zip(w_opt).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn to_db(linear: f64) -> f64 {
    if linear > 0.0 {
        (10.0 * linear.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Percentage of test samples with `sign(uᵀw) ≠ y`, where `sign(0) = +1`.
pub fn testing_error(w: &[f64], test: &AgentDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if w.len() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: test.dim(),
            found: w.len(),
        });
    }
    let wrong = (0..test.len())
        .filter(|&n| {
            let score: f64 = test.row(n).iter().zip(w).map(|(a, b)| a * b).sum();
            let predicted = if score >= 0.0 { 1.0 } else { -1.0 };
            predicted != test.target(n)
        })
        .count();
    Ok(100.0 * wrong as f64 / test.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// `‖w_i − w^o‖²`, also written in dB.
    Msd,
    /// Test error in percent.
    TestError,
}

/// Distance between the adaptive probabilities at the last iteration and the optimal ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbabilityDistance {
    /// `‖p^o − p̂‖` over agents, averaged over repetitions.
    pub agents: f64,
    /// `(1/K) Σ_k ‖p_n^{(k),o} − p̂_n^{(k)}‖`, averaged over repetitions.
    pub data: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeTrace {
    pub scheme: Scheme,
    pub replacement: Replacement,
    /// Per-iteration mean over repetitions, iterations `1..=T`.
    pub mean: Vec<f64>,
    pub per_repetition: Vec<Vec<f64>>,
    pub distance: Option<ProbabilityDistance>,
}

impl SchemeTrace {
    pub fn from_repetitions(
        scheme: Scheme,
        replacement: Replacement,
        per_repetition: Vec<Vec<f64>>,
        distance: Option<ProbabilityDistance>,
    ) -> Self {
        Self {
            scheme,
            replacement,
            mean: mean_trace(&per_repetition),
            per_repetition,
            distance,
        }
    }

    /// Mean of the last tenth of the averaged trace, at least one point.
    pub fn steady_state(&self) -> Option<f64> {
        steady_state(&self.mean)
    }
}

/// Element-wise arithmetic mean, summed in repetition order.
pub fn mean_trace(traces: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    let r = traces.len() as f64;
    (0..first.len())
        .map(|i| traces.iter().map(|t| t[i]).sum::<f64>() / r)
        .collect()
}

pub fn steady_state(trace: &[f64]) -> Option<f64> {
    if trace.is_empty() {
        return None;
    }
    let tail = (trace.len() / 10).max(1);
    let slice = &trace[trace.len() - tail..];
    Some(slice.iter().sum::<f64>() / slice.len() as f64)
}

/// First `i` at which the means of the windows `(i−2w, i−w]` and `(i−w, i]`
/// differ by less than `tolerance` relative to the earlier one.
pub fn plateau(trace: &[f64], window: usize, tolerance: f64) -> Option<usize> {
    if window == 0 {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (2 * window..=trace.len()).find(|&i| {
        let before = mean(&trace[i - 2 * window..i - window]);
        let after = mean(&trace[i - window..i]);
        (after - before).abs() < tolerance * before.abs()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricTrace {
    pub metric: Metric,
    /// Iterations per run.
    pub horizon: usize,
    pub schemes: Vec<SchemeTrace>,
}

impl MetricTrace {
    pub fn scheme(&self, scheme: Scheme) -> Option<&SchemeTrace> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }
}
