//! Oracle checks run by `isfedavg verify`.
//!
//! Each check compares a library routine with brute force: exhaustive
//! enumeration of sampling outcomes, Monte-Carlo frequencies, or a grid
//! search over the simplex. All randomness comes from fixed seeds.

use rand::Rng;

use crate::error::Result;
use crate::estimator::{ht_estimate, ht_variance_with_replacement, ht_variance_without_replacement, WeightedSampleSet};
use crate::probabilities::{agent_score, optimal_agent_probabilities, optimal_data_probabilities};
use crate::rng::{stream, tag, SimRng};
use crate::sampling::{
    exact_inclusion_probabilities, pair_inclusion, sequential_outcomes, systematic_outcomes_permuted,
    systematic_sample_without_replacement, with_replacement_outcomes, InclusionScheme, Outcome, ProbabilityVector,
    Replacement, SampleDraw,
};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{status}] {}: {}", self.name, self.detail)
    }
}

/// Runs every check; never short-circuits.
pub fn run_all() -> Result<Vec<CheckResult>> {
    Ok(vec![
        estimator_moments()?,
        inclusion_probabilities()?,
        systematic_frequencies()?,
        optimal_probabilities()?,
    ])
}

fn random_probabilities(rng: &mut SimRng, n: usize, batch: usize) -> ProbabilityVector {
    // Shrinks a random vector toward uniform until batch * p_n ≤ 1 holds, so
    // systematic sampling applies; batch = n leaves only the uniform vector.
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let p = ProbabilityVector::from_scores(&raw);
    let u = 1.0 / n as f64;
    let cap = 1.0 / batch as f64;
    let t = p
        .as_slice()
        .iter()
        .filter(|&&v| v > cap)
        .map(|&v| (cap - u) / (v - u))
        .fold(1.0, f64::min);
    ProbabilityVector::from_scores(&p.as_slice().iter().map(|&v| u + t * (v - u)).collect::<Vec<_>>())
}

/// Mean and second central moment of the estimator over an outcome distribution.
fn outcome_moments(values: &[Vec<f64>], p: &ProbabilityVector, outcomes: &[Outcome], replacement: Replacement) -> Result<(Vec<f64>, f64)> {
    let dim = values[0].len();
    let mut mean = vec![0.0; dim];
    let mut estimates = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let e = ht_estimate(
            values,
            p,
            &SampleDraw {
                indices: o.indices.clone(),
                replacement,
            },
        )?;
        for (m, v) in mean.iter_mut().zip(&e) {
            *m += o.probability * v;
        }
        estimates.push(e);
    }
    let var = outcomes
        .iter()
        .zip(&estimates)
        .map(|(o, e)| o.probability * e.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok((mean, var))
}

/// Enumerated mean and variance of the HT estimator against the population
/// mean and both closed-form variances.
pub fn estimator_moments() -> Result<CheckResult> {
    let mut rng = stream(&[tag::PROBE, 1]);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in 2..=5 {
        for batch in 1..=3.min(n) {
            for _ in 0..4 {
                let values: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
                let truth: Vec<f64> = (0..2).map(|d| values.iter().map(|v| v[d]).sum::<f64>() / n as f64).collect();
                let set = WeightedSampleSet::fixed(values.clone());
                let p = random_probabilities(&mut rng, n, batch);

                let with = with_replacement_outcomes(&p, batch)?;
                let (m, v) = outcome_moments(&values, &p, &with, Replacement::With)?;
                worst = worst.max(max_gap(&m, &truth)).max((v - ht_variance_with_replacement(&set, &p, batch)?).abs());

                let sys = systematic_outcomes_permuted(&p, batch)?;
                let (m, v) = outcome_moments(&values, &p, &sys, Replacement::Without)?;
                let formula = ht_variance_without_replacement(&set, &p, batch, &pair_inclusion(&sys, n))?;
                worst = worst.max(max_gap(&m, &truth)).max((v - formula.exact).abs());

                let seq = sequential_outcomes(&p, batch)?;
                let incl = exact_inclusion_probabilities(&p, batch, InclusionScheme::Sequential)?;
                let normalized = ProbabilityVector::new(incl.iter().map(|v| v / batch as f64).collect())?;
                let (m, v) = outcome_moments(&values, &normalized, &seq, Replacement::Without)?;
                let formula = ht_variance_without_replacement(&set, &normalized, batch, &pair_inclusion(&seq, n))?;
                worst = worst.max(max_gap(&m, &truth)).max((v - formula.exact).abs());
                cases += 3;
            }
        }
    }
    Ok(CheckResult {
        name: "estimator moments",
        passed: worst <= 1e-10,
        detail: format!("{cases} enumerated cases, largest deviation {worst:.2e} (tolerance 1e-10)"),
    })
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Inclusion sums, the four-element sequential example, and agreement of
/// the systematic sampler's enumerated inclusions with `B p_n`.
pub fn inclusion_probabilities() -> Result<CheckResult> {
    let pi = ProbabilityVector::new(vec![1.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0, 1.0 / 6.0])?;
    let seq = exact_inclusion_probabilities(&pi, 2, InclusionScheme::Sequential)?;
    let example_gap = (seq[0] - 19.0 / 30.0).abs();
    let mut rng = stream(&[tag::PROBE, 2]);
    let mut sum_gap: f64 = 0.0;
    for n in 2..=6 {
        for batch in 1..=n.min(3) {
            let p = random_probabilities(&mut rng, n, batch);
            for scheme in [InclusionScheme::Sequential, InclusionScheme::Systematic] {
                let incl = exact_inclusion_probabilities(&p, batch, scheme)?;
                sum_gap = sum_gap.max((incl.iter().sum::<f64>() - batch as f64).abs());
            }
            if n <= 5 {
                let enumerated = crate::sampling::inclusion_from_outcomes(&systematic_outcomes_permuted(&p, batch)?, n);
                let target: Vec<f64> = p.as_slice().iter().map(|v| batch as f64 * v).collect();
                sum_gap = sum_gap.max(max_gap(&enumerated, &target));
            }
        }
    }
    Ok(CheckResult {
        name: "inclusion probabilities",
        passed: example_gap <= 1e-12 && sum_gap <= 1e-10,
        detail: format!("P(0 included) = {:.15} (19/30), largest sum gap {sum_gap:.2e}", seq[0]),
    })
}

/// Monte-Carlo inclusion frequencies of systematic sampling within 3 standard
/// errors of `B p_n`.
pub fn systematic_frequencies() -> Result<CheckResult> {
    const TRIALS: usize = 100_000;
    let p = ProbabilityVector::new(vec![0.05, 0.1, 0.15, 0.2, 0.2, 0.3])?;
    let batch = 3;
    let mut rng = stream(&[tag::PROBE, 3]);
    let mut counts = [0usize; 6];
    for _ in 0..TRIALS {
        for i in systematic_sample_without_replacement(&p, batch, &mut rng)?.indices {
            counts[i] += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        let target = batch as f64 * p.get(i);
        let freq = c as f64 / TRIALS as f64;
        let se = (target * (1.0 - target) / TRIALS as f64).sqrt();
        let z = if se > 0.0 { (freq - target).abs() / se } else { (freq - target).abs() * f64::INFINITY };
        worst = worst.max(z);
    }
    Ok(CheckResult {
        name: "systematic frequencies",
        passed: worst <= 3.0,
        detail: format!("{TRIALS} draws, largest deviation {worst:.2} standard errors"),
    })
}

/// Grid search over the simplex at resolution 0.01 for `Σ c_n² / p_n`, the
/// objective both optimal formulas minimize.
pub fn optimal_probabilities() -> Result<CheckResult> {
    let mut rng = stream(&[tag::PROBE, 4]);
    let mut worst: f64 = f64::NEG_INFINITY;
    for dim in 2..=4 {
        for _ in 0..3 {
            let norms: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..3.0)).collect();
            let objective = |p: &[f64]| norms.iter().zip(p).map(|(c, q)| c * c / q).sum::<f64>();
            let data = optimal_data_probabilities(&norms);
            let sigma: Vec<f64> = norms.iter().map(|c| c * c).collect();
            let zeros = vec![0.0; dim];
            let alphas = vec![3.0; dim];
            let agents = optimal_agent_probabilities(&sigma, &zeros, &alphas)?;
            let scores: Vec<f64> = (0..dim).map(|k| agent_score(sigma[k], 0.0, 3.0)).collect();
            let agent_objective = |p: &[f64]| scores.iter().zip(p).map(|(c, q)| c * c / q).sum::<f64>();
            let best_grid = grid_min(dim, &objective);
            worst = worst.max(objective(data.as_slice()) - best_grid);
            worst = worst.max(agent_objective(agents.as_slice()) - grid_min(dim, &agent_objective));
        }
    }
    Ok(CheckResult {
        name: "optimal probabilities",
        passed: worst <= 1e-12,
        detail: format!("closed form minus best grid point at most {worst:.2e}"),
    })
}

fn grid_min(dim: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    fn walk(prefix: &mut Vec<usize>, left: usize, dim: usize, f: &dyn Fn(&[f64]) -> f64, best: &mut f64) {
        if prefix.len() + 1 == dim {
            if left == 0 {
                return;
            }
            prefix.push(left);
            let p: Vec<f64> = prefix.iter().map(|&c| c as f64 / 100.0).collect();
            *best = best.min(f(&p));
            prefix.pop();
            return;
        }
        for c in 1..left {
            prefix.push(c);
            walk(prefix, left - c, dim, f, best);
            prefix.pop();
        }
    }
    let mut best = f64::INFINITY;
    walk(&mut Vec::with_capacity(dim), 100, dim, f, &mut best);
    best
}
