//! Horvitz–Thompson mini-batch means and their exact moments.
//!
//! Every estimator here has the form `(1/B) Σ_b x_b / (N p_b)` where `p`
//! holds per-draw probabilities (with replacement) or normalized inclusion
//! probabilities (without replacement). Under either reading the estimator
//! is unbiased for the population mean.

use crate::error::{Error, Result};
use crate::sampling::{ProbabilityVector, SampleDraw};

/// Elements of a population, optionally random with known first and
/// second moments.
#[derive(Clone, Debug)]
pub struct WeightedSampleSet {
    pub values: Vec<Vec<f64>>,
    pub means: Option<Vec<Vec<f64>>>,
    pub variances: Option<Vec<f64>>,
}

impl WeightedSampleSet {
    /// Fixed elements: each mean is the value itself and variances are zero.
    pub fn fixed(values: Vec<Vec<f64>>) -> Self {
        let n = values.len();
        Self {
            means: Some(values.clone()),
            variances: Some(vec![0.0; n]),
            values,
        }
    }

    /// Random elements described only through their moments.
    pub fn random(means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                found: variances.len(),
            });
        }
        if let Some((index, &value)) = variances.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeEntry { index, value });
        }
        Ok(Self {
            values: means.clone(),
            means: Some(means),
            variances: Some(variances),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn moments(&self) -> Result<(&[Vec<f64>], &[f64])> {
        match (&self.means, &self.variances) {
            (Some(m), Some(v)) if m.len() == self.len() && v.len() == self.len() => Ok((m, v)),
            _ => Err(Error::MissingMoments),
        }
    }
}

/// `(1/B) Σ_b x_b / (N p_b)` over the drawn indices.
pub fn ht_estimate(values: &[Vec<f64>], p: &ProbabilityVector, draw: &SampleDraw) -> Result<Vec<f64>> {
    let n = values.len();
    if n != p.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p.len(),
        });
    }
    let dim = values.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for &i in &draw.indices {
        let x = values
            .get(i)
            .ok_or_else(|| Error::IndexOutOfRange(format!("drawn index {i} of {n}")))?;
        let pi = p.get(i);
        if pi <= 0.0 {
            return Err(Error::ZeroProbabilityDrawn { index: i });
        }
        let w = 1.0 / (n as f64 * pi);
        for (o, v) in out.iter_mut().zip(x) {
            *o += w * v;
        }
    }
    let b = draw.len() as f64;
    out.iter_mut().for_each(|o| *o /= b);
    Ok(out)
}

fn population_mean(means: &[Vec<f64>]) -> Vec<f64> {
    let n = means.len() as f64;
    let dim = means.first().map_or(0, Vec::len);
    let mut m = vec![0.0; dim];
    for x in means {
        for (a, v) in m.iter_mut().zip(x) {
            *a += v / n;
        }
    }
    m
}

/// Per-element diagonal contributions `p_n (σ_n²/(N²p_n²) + ‖x̄_n/(Np_n) − x̄‖²)`
/// and the centred scaled means `x̄_n/(Np_n) − x̄`.
fn diagonal_terms(set: &WeightedSampleSet, p: &ProbabilityVector) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (means, variances) = set.moments()?;
    let n = means.len();
    if p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p.len(),
        });
    }
    let mean = population_mean(means);
    let nf = n as f64;
    let mut diag = Vec::with_capacity(n);
    let mut centred = Vec::with_capacity(n);
    for i in 0..n {
        let pi = p.get(i);
        if pi <= 0.0 {
            // Never drawn; contributes nothing to either variance.
            diag.push(0.0);
            centred.push(vec![0.0; mean.len()]);
            continue;
        }
        let scale = 1.0 / (nf * pi);
        let c: Vec<f64> = means[i].iter().zip(&mean).map(|(x, m)| scale * x - m).collect();
        let sq: f64 = c.iter().map(|v| v * v).sum();
        diag.push(pi * (variances[i] * scale * scale + sq));
        centred.push(c);
    }
    Ok((diag, centred))
}

/// Exact variance of the with-replacement estimator with `batch` draws.
pub fn ht_variance_with_replacement(set: &WeightedSampleSet, p: &ProbabilityVector, batch: usize) -> Result<f64> {
    let (diag, _) = diagonal_terms(set, p)?;
    Ok(diag.iter().sum::<f64>() / batch as f64)
}

/// Without-replacement variance, split into its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WithoutReplacementVariance {
    /// Exact variance, including the pairwise cross term.
    pub exact: f64,
    /// The diagonal part alone; equals the with-replacement variance.
    pub diagonal: f64,
    /// The pairwise cross term.
    pub cross: f64,
    /// Jensen bound `Σ_n p_n (σ_n²/(N²p_n²) + ‖x̄_n/(Np_n) − x̄‖²)`.
    pub jensen_bound: f64,
}

/// Exact variance of the without-replacement estimator given the joint
/// inclusion probabilities of the scheme. `pair_inclusion[n][n]` must equal
/// `batch * p_n`.
pub fn ht_variance_without_replacement(
    set: &WeightedSampleSet,
    p: &ProbabilityVector,
    batch: usize,
    pair_inclusion: &[Vec<f64>],
) -> Result<WithoutReplacementVariance> {
    let n = set.len();
    validate_pairs(pair_inclusion, n, p, batch)?;
    let (diag, centred) = diagonal_terms(set, p)?;
    let b = batch as f64;
    let diag_sum: f64 = diag.iter().sum();
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j || pair_inclusion[i][j] == 0.0 {
                continue;
            }
            let dot: f64 = centred[i].iter().zip(&centred[j]).map(|(a, c)| a * c).sum();
            cross += pair_inclusion[i][j] * dot;
        }
    }
    let cross = cross / (b * b);
    Ok(WithoutReplacementVariance {
        exact: diag_sum / b + cross,
        diagonal: diag_sum / b,
        cross,
        jensen_bound: diag_sum,
    })
}

fn validate_pairs(pairs: &[Vec<f64>], n: usize, p: &ProbabilityVector, batch: usize) -> Result<()> {
    const TOL: f64 = 1e-9;
    if pairs.len() != n || pairs.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidPairMatrix(format!("expected {n}x{n}")));
    }
    for i in 0..n {
        for j in 0..n {
            let v = pairs[i][j];
            if !(-TOL..=1.0 + TOL).contains(&v) {
                return Err(Error::InvalidPairMatrix(format!("entry ({i},{j}) = {v}")));
            }
            if (v - pairs[j][i]).abs() > TOL {
                return Err(Error::InvalidPairMatrix(format!("asymmetric at ({i},{j})")));
            }
        }
        if (pairs[i][i] - batch as f64 * p.get(i)).abs() > TOL {
            return Err(Error::InvalidPairMatrix(format!(
                "diagonal {i} = {} but batch * p = {}",
                pairs[i][i],
                batch as f64 * p.get(i)
            )));
        }
    }
    Ok(())
}
