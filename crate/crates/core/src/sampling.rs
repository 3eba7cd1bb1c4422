//! Weighted selection of indices with and without replacement.
//!
//! A [`ProbabilityVector`] plays two roles depending on the scheme:
//! per-draw sampling probabilities when drawing with replacement, and
//! normalized inclusion probabilities (inclusion probability divided by the
//! subset size) for the systematic without-replacement scheme. The
//! sequential scheme keeps the two apart; [`exact_inclusion_probabilities`]
//! converts its sampling probabilities into inclusion probabilities.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sums further than this from one are rejected rather than renormalized.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Slack allowed on `batch * p_n <= 1` before the systematic sampler refuses.
pub const INCLUSION_TOLERANCE: f64 = 1e-12;

/// Largest population handled by the sequential-scheme enumerator.
pub const MAX_ENUMERATION: usize = 12;

/// Largest population for which every ordering is enumerated.
pub const MAX_PERMUTED_ENUMERATION: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates a raw vector; sums within [`SUM_TOLERANCE`] of one are rescaled.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty);
        }
        if let Some((index, &value)) = raw
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::NegativeEntry { index, value });
        }
        let sum: f64 = raw.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self(raw.into_iter().map(|v| v / sum).collect()))
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0, "uniform distribution over an empty set");
        Self(vec![1.0 / len as f64; len])
    }

    /// Normalizes non-negative scores; all-zero scores give the uniform vector.
    pub fn from_scores(scores: &[f64]) -> Self {
        assert!(!scores.is_empty(), "no scores to normalize");
        debug_assert!(scores.iter().all(|s| *s >= 0.0), "negative score");
        let total: f64 = scores.iter().sum();
        if total > 0.0 && total.is_finite() {
            Self(scores.iter().map(|s| s / total).collect())
        } else {
            Self::uniform(scores.len())
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    /// Raw access for in-place updates that keep the sum at one.
    pub(crate) fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    /// Euclidean distance between two vectors of equal length.
    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Raises every entry to at least `floor` and renormalizes.
    pub fn with_floor(&self, floor: f64) -> Self {
        if floor <= 0.0 {
            return self.clone();
        }
        if floor * self.len() as f64 >= 1.0 {
            return Self::uniform(self.len());
        }
        let raised: Vec<f64> = self.0.iter().map(|p| p.max(floor)).collect();
        let total: f64 = raised.iter().sum();
        Self(raised.into_iter().map(|p| p / total).collect())
    }

    /// Makes `batch * p_n <= 1` hold for every entry.
    ///
    /// Offending entries are pinned at `1 / batch` and the remaining mass is
    /// spread over the other entries in proportion to their old values; this
    /// repeats until no entry overflows. Ranking is preserved.
    pub fn capped_for_batch(&self, batch: usize) -> Result<Self> {
        let n = self.len();
        if batch == 0 || batch > n {
            return Err(Error::BatchTooLarge {
                batch,
                population: n,
            });
        }
        let cap = 1.0 / batch as f64;
        if self.0.iter().all(|&p| p <= cap) {
            return Ok(self.clone());
        }
        let mut pinned = vec![false; n];
        let mut out = self.0.clone();
        loop {
            let pinned_count = pinned.iter().filter(|&&f| f).count();
            let free_mass = 1.0 - pinned_count as f64 * cap;
            let free_total: f64 = (0..n).filter(|&i| !pinned[i]).map(|i| self.0[i]).sum();
            let free_count = n - pinned_count;
            for i in 0..n {
                out[i] = if pinned[i] {
                    cap
                } else if free_total > 0.0 {
                    self.0[i] * free_mass / free_total
                } else {
                    free_mass / free_count as f64
                };
            }
            let mut changed = false;
            for i in 0..n {
                if !pinned[i] && out[i] > cap {
                    pinned[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Ok(Self(out))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Replacement {
    With,
    Without,
}

impl std::fmt::Display for Replacement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::With => "with",
            Self::Without => "without",
        })
    }
}

impl std::str::FromStr for Replacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with" => Ok(Self::With),
            "without" => Ok(Self::Without),
            other => Err(Error::Config(format!("unknown replacement mode `{other}`"))),
        }
    }
}

/// Indices selected by one draw; without replacement they are distinct.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleDraw {
    pub indices: Vec<usize>,
    pub replacement: Replacement,
}

impl SampleDraw {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `batch` independent draws, index `n` with probability `p_n` each time.
pub fn sample_with_replacement<R: Rng + ?Sized>(
    p: &ProbabilityVector,
    batch: usize,
    rng: &mut R,
) -> SampleDraw {
    assert!(batch >= 1, "empty batch");
    let indices = if p.len() == 1 {
        vec![0; batch]
    } else {
        let dist = WeightedIndex::new(p.as_slice()).expect("validated probability vector");
        (0..batch).map(|_| dist.sample(rng)).collect()
    };
    SampleDraw {
        indices,
        replacement: Replacement::With,
    }
}

fn check_inclusion(p: &ProbabilityVector, batch: usize) -> Result<()> {
    if batch == 0 || batch > p.len() {
        return Err(Error::BatchTooLarge {
            batch,
            population: p.len(),
        });
    }
    for (index, &pi) in p.as_slice().iter().enumerate() {
        let inclusion = batch as f64 * pi;
        if inclusion > 1.0 + INCLUSION_TOLERANCE {
            return Err(Error::InclusionOverflow { index, inclusion });
        }
    }
    Ok(())
}

/// One pass of systematic selection over `order` with offset `d` in `[0, 1)`.
///
/// Element `order[j]` owns the half-open interval `[Π_{j-1}, Π_j)` of the
/// progressive totals of `batch * p`; it is selected when some `d + ℓ`,
/// `ℓ = 0..batch`, lands inside. The last positive interval is closed at
/// exactly `batch` so rounding in the running sum cannot drop a point.
pub fn systematic_select(
    p: &ProbabilityVector,
    batch: usize,
    d: f64,
    order: &[usize],
) -> Vec<usize> {
    debug_assert!((0.0..1.0).contains(&d));
    let last_positive = order.iter().rposition(|&i| p.get(i) > 0.0);
    let total = batch as f64;
    let mut selected = Vec::with_capacity(batch);
    let mut upper = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        let width = total * p.get(i);
        if width <= 0.0 {
            continue;
        }
        let lower = upper;
        upper = if Some(pos) == last_positive {
            total
        } else {
            lower + width
        };
        let first_point = (lower - d).ceil();
        if first_point < total && first_point + d < upper {
            selected.push(i);
        }
    }
    selected
}

/// Systematic sampling of `batch` distinct indices with inclusion
/// probability `batch * p_n` each.
///
/// The index order is shuffled before the pass; the scheme correlates
/// neighbours, and shuffling keeps those correlations from repeating
/// across calls without touching the marginals.
pub fn systematic_sample_without_replacement<R: Rng + ?Sized>(
    p: &ProbabilityVector,
    batch: usize,
    rng: &mut R,
) -> Result<SampleDraw> {
    check_inclusion(p, batch)?;
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.shuffle(rng);
    loop {
        let d: f64 = rng.random();
        let indices = systematic_select(p, batch, d, &order);
        // A short draw needs d to coincide with a rounded boundary; redraw.
        if indices.len() == batch {
            return Ok(SampleDraw {
                indices,
                replacement: Replacement::Without,
            });
        }
    }
}

/// Draws one index at a time, renormalizing `p` over what is left.
pub fn sequential_sample_without_replacement<R: Rng + ?Sized>(
    p: &ProbabilityVector,
    batch: usize,
    rng: &mut R,
) -> Result<SampleDraw> {
    let positive = p.as_slice().iter().filter(|&&v| v > 0.0).count();
    if batch == 0 || batch > positive {
        return Err(Error::BatchTooLarge {
            batch,
            population: positive,
        });
    }
    let mut remaining: Vec<f64> = p.as_slice().to_vec();
    let mut indices = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mass: f64 = remaining.iter().sum();
        let target = rng.random::<f64>() * mass;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if target < acc {
                break;
            }
        }
        let pick = pick.expect("positive mass remains");
        remaining[pick] = 0.0;
        indices.push(pick);
    }
    Ok(SampleDraw {
        indices,
        replacement: Replacement::Without,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InclusionScheme {
    Sequential,
    Systematic,
}

/// Exact per-index inclusion probabilities; they sum to `batch`.
///
/// For the sequential scheme `p` holds sampling probabilities and the result
/// is obtained by enumerating every reachable subset. For the systematic
/// scheme `p` holds normalized inclusion probabilities and the result is
/// `min(batch * p_n, 1)`.
pub fn exact_inclusion_probabilities(
    p: &ProbabilityVector,
    batch: usize,
    scheme: InclusionScheme,
) -> Result<Vec<f64>> {
    if batch == 0 || batch > p.len() {
        return Err(Error::BatchTooLarge {
            batch,
            population: p.len(),
        });
    }
    match scheme {
        InclusionScheme::Systematic => Ok(p
            .as_slice()
            .iter()
            .map(|&v| (batch as f64 * v).min(1.0))
            .collect()),
        InclusionScheme::Sequential => {
            let outcomes = sequential_outcomes(p, batch)?;
            Ok(inclusion_from_outcomes(&outcomes, p.len()))
        }
    }
}

/// One possible result of a draw together with its probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub probability: f64,
    pub indices: Vec<usize>,
}

/// Distribution of the unordered subset produced by the sequential scheme.
pub fn sequential_outcomes(p: &ProbabilityVector, batch: usize) -> Result<Vec<Outcome>> {
    let n = p.len();
    if n > MAX_ENUMERATION {
        return Err(Error::TooLargeToEnumerate(n));
    }
    let positive = p.as_slice().iter().filter(|&&v| v > 0.0).count();
    if batch == 0 || batch > positive {
        return Err(Error::BatchTooLarge {
            batch,
            population: positive,
        });
    }
    let mut reach = vec![0.0f64; 1 << n];
    reach[0] = 1.0;
    // Supersets are numerically larger than their subsets, so one ascending
    // sweep visits every subset after all its predecessors.
    for mask in 0..(1usize << n) {
        let prob = reach[mask];
        if prob == 0.0 || mask.count_ones() as usize >= batch {
            continue;
        }
        let left: f64 = (0..n)
            .filter(|i| mask & (1 << i) == 0)
            .map(|i| p.get(i))
            .sum();
        for i in 0..n {
            if mask & (1 << i) == 0 && p.get(i) > 0.0 {
                reach[mask | (1 << i)] += prob * p.get(i) / left;
            }
        }
    }
    Ok((0..(1usize << n))
        .filter(|m| m.count_ones() as usize == batch && reach[*m] > 0.0)
        .map(|m| Outcome {
            probability: reach[m],
            indices: (0..n).filter(|i| m & (1 << i) != 0).collect(),
        })
        .collect())
}

/// Distribution of the systematic scheme for a fixed order, integrating
/// the offset `d` exactly over `[0, 1)`.
pub fn systematic_outcomes(
    p: &ProbabilityVector,
    batch: usize,
    order: &[usize],
) -> Result<Vec<Outcome>> {
    check_inclusion(p, batch)?;
    let mut breaks = vec![0.0, 1.0];
    let mut acc = 0.0;
    for &i in order {
        acc += batch as f64 * p.get(i);
        breaks.push(acc - acc.floor());
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for w in breaks.windows(2) {
        let width = w[1] - w[0];
        if width <= 0.0 {
            continue;
        }
        let mut indices = systematic_select(p, batch, 0.5 * (w[0] + w[1]), order);
        indices.sort_unstable();
        *merged.entry(indices).or_default() += width;
    }
    Ok(merged
        .into_iter()
        .map(|(indices, probability)| Outcome {
            probability,
            indices,
        })
        .collect())
}

/// Distribution of [`systematic_sample_without_replacement`], i.e. averaged
/// over every ordering of the population.
pub fn systematic_outcomes_permuted(p: &ProbabilityVector, batch: usize) -> Result<Vec<Outcome>> {
    let n = p.len();
    if n > MAX_PERMUTED_ENUMERATION {
        return Err(Error::TooLargeToEnumerate(n));
    }
    let orders = permutations(n);
    let weight = 1.0 / orders.len() as f64;
    let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for order in &orders {
        for o in systematic_outcomes(p, batch, order)? {
            *merged.entry(o.indices).or_default() += weight * o.probability;
        }
    }
    Ok(merged
        .into_iter()
        .map(|(indices, probability)| Outcome {
            probability,
            indices,
        })
        .collect())
}

/// Every ordered `batch`-tuple of independent draws.
pub fn with_replacement_outcomes(p: &ProbabilityVector, batch: usize) -> Result<Vec<Outcome>> {
    let n = p.len();
    let count = (n as f64).powi(batch as i32);
    if count > 1e6 {
        return Err(Error::TooLargeToEnumerate(n));
    }
    let mut out = vec![Outcome {
        probability: 1.0,
        indices: Vec::new(),
    }];
    for _ in 0..batch {
        out = out
            .into_iter()
            .flat_map(|o| {
                (0..n).filter(|&i| p.get(i) > 0.0).map(move |i| {
                    let mut indices = o.indices.clone();
                    indices.push(i);
                    Outcome {
                        probability: o.probability * p.get(i),
                        indices,
                    }
                })
            })
            .collect();
    }
    Ok(out)
}

pub fn inclusion_from_outcomes(outcomes: &[Outcome], n: usize) -> Vec<f64> {
    let mut incl = vec![0.0; n];
    for o in outcomes {
        let mut seen = vec![false; n];
        for &i in &o.indices {
            if !seen[i] {
                seen[i] = true;
                incl[i] += o.probability;
            }
        }
    }
    incl
}

/// Joint inclusion matrix `P(i ∈ S, j ∈ S)`; the diagonal holds `P(i ∈ S)`.
pub fn pair_inclusion(outcomes: &[Outcome], n: usize) -> Vec<Vec<f64>> {
    let mut pairs = vec![vec![0.0; n]; n];
    for o in outcomes {
        let mut members: Vec<usize> = o.indices.clone();
        members.sort_unstable();
        members.dedup();
        for &a in &members {
            for &b in &members {
                pairs[a][b] += o.probability;
            }
        }
    }
    pairs
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}
