//! Variance-minimizing inclusion probabilities and their run-time estimates.
//!
//! Data points get `p_n ∝ ‖∇Q_k(w; x_n)‖`. Agents get
//! `p_k ∝ sqrt(σ_{s,k}² + α_k ‖∇P_k(w)‖²)`. The optimal rule evaluates both at
//! `w^o`, the plug-in rule at the current iterate, and the adaptive rule
//! patches only the entries that were sampled in the last iteration.

use crate::error::{Error, Result};
use crate::problems::ProblemInstance;
use crate::sampling::{ProbabilityVector, SampleDraw};

/// `α_k = 3 + 6/(E_k B_k)`.
pub fn alpha(epochs: usize, batch: usize) -> f64 {
    3.0 + 6.0 / (epochs * batch) as f64
}

/// `p_n ∝ ‖∇Q_k(w^o; x_n)‖`; all-zero norms give the uniform vector.
pub fn optimal_data_probabilities(gradient_norms: &[f64]) -> ProbabilityVector {
    ProbabilityVector::from_scores(gradient_norms)
}

pub fn agent_score(sigma_sk: f64, grad_norm: f64, alpha_k: f64) -> f64 {
    (sigma_sk + alpha_k * grad_norm * grad_norm).sqrt()
}

/// `p_k ∝ sqrt(σ_{s,k}² + α_k ‖∇P_k(w^o)‖²)`; all-zero scores give the uniform vector.
pub fn optimal_agent_probabilities(sigma_sk: &[f64], grad_norms: &[f64], alpha_k: &[f64]) -> Result<ProbabilityVector> {
    let k = sigma_sk.len();
    for len in [grad_norms.len(), alpha_k.len()] {
        if len != k {
            return Err(Error::DimensionMismatch { expected: k, found: len });
        }
    }
    if k == 0 {
        return Err(Error::Empty);
    }
    let scores: Vec<f64> = (0..k)
        .map(|i| agent_score(sigma_sk[i], grad_norms[i], alpha_k[i]))
        .collect();
    Ok(ProbabilityVector::from_scores(&scores))
}

/// `σ_{s,k}² = 6/(E_k B_k N_k²) Σ_n ‖∇Q_k(w; x_n)‖² / p_n`.
///
/// Terms with a zero norm contribute nothing even where `p_n = 0`.
pub fn data_variability(gradient_norms: &[f64], p: &ProbabilityVector, epochs: usize, batch: usize) -> f64 {
    let n = gradient_norms.len() as f64;
    let sum: f64 = gradient_norms
        .iter()
        .zip(p.as_slice())
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, pn)| g * g / pn)
        .sum();
    6.0 / ((epochs * batch) as f64 * n * n) * sum
}

/// All per-sample gradient norms of agent `k` at `w`.
pub fn sample_gradient_norms(instance: &ProblemInstance, k: usize, w: &[f64]) -> Vec<f64> {
    (0..instance.samples(k))
        .map(|n| instance.sample_gradient_norm(k, n, w))
        .collect()
}

fn euclidean(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Agent and per-agent data probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityPlan {
    pub agents: ProbabilityVector,
    pub data: Vec<ProbabilityVector>,
}

impl ProbabilityPlan {
    pub fn uniform(instance: &ProblemInstance) -> Self {
        Self {
            agents: ProbabilityVector::uniform(instance.num_agents()),
            data: (0..instance.num_agents())
                .map(|k| ProbabilityVector::uniform(instance.samples(k)))
                .collect(),
        }
    }

    /// Mean over agents of `‖p^{(k)} − q^{(k)}‖`.
    pub fn mean_data_distance(&self, other: &Self) -> f64 {
        let total: f64 = self.data.iter().zip(&other.data).map(|(a, b)| a.distance(b)).sum();
        total / self.data.len() as f64
    }
}

/// Both optimal formulas evaluated at `w`, with exact local gradients.
///
/// At `w = w^o` this is the optimal plan; at `w = w_{i-1}` it is the plug-in plan.
pub fn probabilities_at(
    instance: &ProblemInstance,
    w: &[f64],
    epochs: &[usize],
    batches: &[usize],
) -> Result<ProbabilityPlan> {
    let k = instance.num_agents();
    for len in [epochs.len(), batches.len()] {
        if len != k {
            return Err(Error::DimensionMismatch { expected: k, found: len });
        }
    }
    let mut data = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    let mut alphas = Vec::with_capacity(k);
    for a in 0..k {
        let g = sample_gradient_norms(instance, a, w);
        let p = optimal_data_probabilities(&g);
        sigma.push(data_variability(&g, &p, epochs[a], batches[a]));
        norms.push(euclidean(&instance.local_gradient(a, w)?));
        alphas.push(alpha(epochs[a], batches[a]));
        data.push(p);
    }
    Ok(ProbabilityPlan {
        agents: optimal_agent_probabilities(&sigma, &norms, &alphas)?,
        data,
    })
}

pub fn plugin_probabilities(
    instance: &ProblemInstance,
    w_current: &[f64],
    epochs: &[usize],
    batches: &[usize],
) -> Result<ProbabilityPlan> {
    probabilities_at(instance, w_current, epochs, batches)
}

/// Probabilities maintained across iterations by partial updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveState {
    pub agent_probs: ProbabilityVector,
    pub data_probs: Vec<ProbabilityVector>,
    pub sigma_sk: Vec<f64>,
    pub alpha_k: Vec<f64>,
}

/// Distinct indices of a draw, in first-appearance order, with the mean score of repeats.
fn merge_repeats(draw: &SampleDraw, scores: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    if scores.len() != draw.len() {
        return Err(Error::DimensionMismatch {
            expected: draw.len(),
            found: scores.len(),
        });
    }
    let mut indices: Vec<usize> = Vec::with_capacity(draw.len());
    let mut totals: Vec<f64> = Vec::with_capacity(draw.len());
    let mut counts: Vec<usize> = Vec::with_capacity(draw.len());
    for (&i, &s) in draw.indices.iter().zip(scores) {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::NegativeEntry { index: i, value: s });
        }
        match indices.iter().position(|&j| j == i) {
            Some(pos) => {
                totals[pos] += s;
                counts[pos] += 1;
            }
            None => {
                indices.push(i);
                totals.push(s);
                counts.push(1);
            }
        }
    }
    let means = totals.iter().zip(&counts).map(|(t, &c)| t / c as f64).collect();
    Ok((indices, means))
}

/// Reassigns the mass left over by non-members to `members`, in proportion to `scores`.
fn reassign(p: &mut ProbabilityVector, members: &[usize], scores: &[f64], floor: f64) -> Result<()> {
    if let Some(&bad) = members.iter().find(|&&i| i >= p.len()) {
        return Err(Error::IndexOutOfRange(format!("index {bad} of {}", p.len())));
    }
    let mut is_member = vec![false; p.len()];
    for &i in members {
        is_member[i] = true;
    }
    let outside = |p: &ProbabilityVector| {
        p.as_slice()
            .iter()
            .zip(&is_member)
            .filter(|(_, m)| !**m)
            .map(|(v, _)| v)
            .sum::<f64>()
    };
    let mut remaining = 1.0 - outside(p);
    if remaining <= 0.0 {
        // Members were stored at zero; lift them off zero before splitting.
        *p = p.with_floor(floor);
        remaining = 1.0 - outside(p);
        if remaining <= 0.0 {
            return Err(Error::MassOverflow { mass: 1.0 - remaining });
        }
    }
    let total: f64 = scores.iter().sum();
    let entries = p.entries_mut();
    for (&i, &s) in members.iter().zip(scores) {
        entries[i] = if total > 0.0 {
            s / total * remaining
        } else {
            remaining / members.len() as f64
        };
    }
    Ok(())
}

impl AdaptiveState {
    /// Uniform start with `σ_{s,k}² = 0`.
    pub fn uniform(instance: &ProblemInstance, epochs: &[usize], batches: &[usize]) -> Self {
        let plan = ProbabilityPlan::uniform(instance);
        Self {
            agent_probs: plan.agents,
            data_probs: plan.data,
            sigma_sk: vec![0.0; instance.num_agents()],
            alpha_k: epochs.iter().zip(batches).map(|(&e, &b)| alpha(e, b)).collect(),
        }
    }

    pub fn plan(&self) -> ProbabilityPlan {
        ProbabilityPlan {
            agents: self.agent_probs.clone(),
            data: self.data_probs.clone(),
        }
    }

    /// Participants split `1 − Σ_{non-participants} p̂` in proportion to
    /// `sqrt(σ_{s,ℓ}² + α_ℓ ‖∇̂P_ℓ‖²)`; every other entry is left untouched.
    ///
    /// `grad_norms` is aligned with `participants.indices`; repeated agents
    /// use the mean of their norms.
    pub fn update_agent_probabilities(
        &mut self,
        participants: &SampleDraw,
        grad_norms: &[f64],
        floor: f64,
    ) -> Result<()> {
        let (members, norms) = merge_repeats(participants, grad_norms)?;
        if let Some(&bad) = members.iter().find(|&&k| k >= self.sigma_sk.len()) {
            return Err(Error::IndexOutOfRange(format!("agent {bad}")));
        }
        let scores: Vec<f64> = members
            .iter()
            .zip(&norms)
            .map(|(&k, &g)| agent_score(self.sigma_sk[k], g, self.alpha_k[k]))
            .collect();
        reassign(&mut self.agent_probs, &members, &scores, floor)
    }

    /// Same contract as the agent update, on agent `k`'s data vector with
    /// scores `‖∇Q_k(w_{i-1}; x_n)‖`.
    pub fn update_data_probabilities(
        &mut self,
        k: usize,
        batch: &SampleDraw,
        sample_grad_norms: &[f64],
        floor: f64,
    ) -> Result<()> {
        let (members, norms) = merge_repeats(batch, sample_grad_norms)?;
        let p = self
            .data_probs
            .get_mut(k)
            .ok_or_else(|| Error::IndexOutOfRange(format!("agent {k}")))?;
        reassign(p, &members, &norms, floor)
    }
}
