//! Numeric values of the constants in the convergence bounds.
//!
//! With replacement:
//! `β_s² = 3δ²/L + (1/(L K²)) Σ_k (β_{s,k}² + 3δ²)/p_k` and
//! `σ_s² = (1/(L K²)) Σ_k (σ_{s,k}² + α_k ‖∇P_k(w^o)‖²)/p_k`.
//! Without replacement both global constants lose the `1/L` factor; the
//! per-agent constants are the same in both modes.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::federated::{FederationConfig, LocalTrace};
use crate::problems::{ModelVector, ProblemInstance, ProblemKind};
use crate::probabilities::{alpha, sample_gradient_norms, ProbabilityPlan};
use crate::sampling::{Replacement, SampleDraw};

/// `ν`, `δ` and, when local minimizers have closed forms, `ξ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curvature {
    pub nu: f64,
    pub delta: f64,
    pub xi: Option<f64>,
}

pub fn curvature_constants(instance: &ProblemInstance) -> Result<Curvature> {
    let rho = instance.ridge();
    let max_sq_norm = instance
        .agents()
        .iter()
        .flat_map(|a| (0..a.len()).map(move |n| a.row(n).iter().map(|v| v * v).sum::<f64>()))
        .fold(0.0, f64::max);
    match instance.kind() {
        ProblemKind::Regression => {
            let (r, _) = instance.pooled_moments();
            let nu = 2.0 * SymmetricEigen::new(r).eigenvalues.min() + 2.0 * rho;
            let wo = instance.closed_form_minimizer()?;
            let mut xi: f64 = 0.0;
            for k in 0..instance.num_agents() {
                xi = xi.max(instance.local_minimizer(k)?.distance_squared(&wo).sqrt());
            }
            Ok(Curvature {
                nu,
                delta: 2.0 * max_sq_norm + 2.0 * rho,
                xi: Some(xi),
            })
        }
        ProblemKind::Logistic => Ok(Curvature {
            nu: 2.0 * rho,
            delta: max_sq_norm / 4.0 + 2.0 * rho,
            xi: None,
        }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryConstants {
    pub nu: f64,
    pub delta: f64,
    pub xi: Option<f64>,
    /// `p_k` the constants were evaluated with.
    pub agent_probs: Vec<f64>,
    pub epochs: Vec<usize>,
    pub beta_sk_sq: Vec<f64>,
    pub sigma_sk_sq: Vec<f64>,
    pub sigma_qk_sq: Vec<f64>,
    pub alpha_k: Vec<f64>,
    /// `‖∇P_k(w^o)‖`.
    pub grad_norms: Vec<f64>,
    pub beta_s_sq: f64,
    pub sigma_s_sq: f64,
    pub participants: usize,
    pub replacement: Replacement,
    pub step_size: f64,
    pub rates: Rates,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rates {
    pub lambda: f64,
    pub lambda_k: Vec<f64>,
    pub mu_max: f64,
}

/// `(1/N²) Σ_n w_n / p_n` with zero-weight terms skipped.
fn weighted_inverse_sum(weights: impl Iterator<Item = f64>, p: &[f64]) -> f64 {
    let n = p.len() as f64;
    weights
        .zip(p)
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, pn)| w / pn)
        .sum::<f64>()
        / (n * n)
}

/// Evaluates every constant at `w_ref` with the probabilities of `plan`.
///
/// `σ_{q,k}²` uses the local minimizers `w_k^o` for regression and `w_ref`
/// for logistic risks, which have no closed form.
pub fn noise_constants(
    instance: &ProblemInstance,
    plan: &ProbabilityPlan,
    config: &FederationConfig,
    w_ref: &[f64],
) -> Result<TheoryConstants> {
    config.validate(instance)?;
    let k = instance.num_agents();
    if plan.agents.len() != k || plan.data.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: plan.data.len(),
        });
    }
    let curv = curvature_constants(instance)?;
    let d2 = curv.delta * curv.delta;
    let mut beta = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    let mut sigma_q = Vec::with_capacity(k);
    let mut alphas = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    for a in 0..k {
        let (e, b) = (config.epochs[a] as f64, config.batches[a] as f64);
        let p = plan.data[a].as_slice();
        if p.len() != instance.samples(a) {
            return Err(Error::DimensionMismatch {
                expected: instance.samples(a),
                found: p.len(),
            });
        }
        let inv = weighted_inverse_sum(std::iter::repeat(1.0), p);
        beta.push(3.0 * d2 / (e * b) * (1.0 + inv));

        let g = sample_gradient_norms(instance, a, w_ref);
        sigma.push(6.0 / (e * b) * weighted_inverse_sum(g.iter().map(|v| v * v), p));

        let local_ref = match instance.kind() {
            ProblemKind::Regression => instance.local_minimizer(a)?,
            ProblemKind::Logistic => ModelVector::from(w_ref.to_vec()),
        };
        let gq = sample_gradient_norms(instance, a, &local_ref);
        sigma_q.push(3.0 / b * weighted_inverse_sum(gq.iter().map(|v| v * v), p));

        alphas.push(alpha(config.epochs[a], config.batches[a]));
        norms.push(instance.local_gradient(a, w_ref)?.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    let pk = plan.agents.as_slice();
    let kf = k as f64;
    let l = config.participants as f64;
    let mut beta_sum = 0.0;
    let mut sigma_sum = 0.0;
    for a in 0..k {
        let (bk, sk) = (beta[a] + 3.0 * d2, sigma[a] + alphas[a] * norms[a] * norms[a]);
        if pk[a] > 0.0 {
            beta_sum += bk / pk[a];
            sigma_sum += sk / pk[a];
        } else {
            beta_sum = f64::INFINITY;
            if sk > 0.0 {
                sigma_sum = f64::INFINITY;
            }
        }
    }
    let scale = match config.replacement {
        Replacement::With => 1.0 / l,
        Replacement::Without => 1.0,
    };
    let beta_s_sq = scale * (3.0 * d2 + beta_sum / (kf * kf));
    let sigma_s_sq = scale * sigma_sum / (kf * kf);
    let mut out = TheoryConstants {
        nu: curv.nu,
        delta: curv.delta,
        xi: curv.xi,
        agent_probs: pk.to_vec(),
        epochs: config.epochs.clone(),
        beta_sk_sq: beta,
        sigma_sk_sq: sigma,
        sigma_qk_sq: sigma_q,
        alpha_k: alphas,
        grad_norms: norms,
        beta_s_sq,
        sigma_s_sq,
        participants: config.participants,
        replacement: config.replacement,
        step_size: config.step_size,
        rates: Rates {
            lambda: f64::NAN,
            lambda_k: Vec::new(),
            mu_max: f64::NAN,
        },
    };
    out.rates = rates(&out, config.step_size);
    Ok(out)
}

/// `λ = 1 − 2μν + μ²(δ² + β_s²)`, `λ_k = 1 − 2μν + μ²(δ² + E_k β_{s,k}²/(K² p_k²))`
/// and `μ_max`, the smallest of the step sizes keeping each of them below one.
pub fn rates(c: &TheoryConstants, mu: f64) -> Rates {
    let d2 = c.delta * c.delta;
    let kf = c.agent_probs.len() as f64;
    let local: Vec<f64> = (0..c.agent_probs.len())
        .map(|a| d2 + c.epochs[a] as f64 * c.beta_sk_sq[a] / (kf * kf * c.agent_probs[a] * c.agent_probs[a]))
        .collect();
    let lambda = 1.0 - 2.0 * mu * c.nu + mu * mu * (d2 + c.beta_s_sq);
    let lambda_k = local.iter().map(|q| 1.0 - 2.0 * mu * c.nu + mu * mu * q).collect();
    let worst_local = local.iter().copied().fold(0.0, f64::max);
    let mu_max = (2.0 * c.nu / (d2 + c.beta_s_sq)).min(2.0 * c.nu / worst_local);
    Rates {
        lambda,
        lambda_k,
        mu_max,
    }
}

/// `λ^i MSD_0 + (1 − λ^i)/(1 − λ) μ² σ_s²`.
pub fn msd_envelope(lambda: f64, mu: f64, sigma_s_sq: f64, msd0: f64, i: usize) -> f64 {
    let li = lambda.powi(i as i32);
    li * msd0 + (1.0 - li) / (1.0 - lambda) * mu * mu * sigma_s_sq
}

/// Realized incremental error
/// `q = (1/L) Σ_ℓ 1/(K p_ℓ E_ℓ B_ℓ) Σ_e Σ_b (∇Q_ℓ(w_{ℓ,e-1}; x_b) − ∇Q_ℓ(w_prev; x_b))/(N_ℓ p_b)`.
///
/// `traces[j]` is the local run of `participants.indices[j]`; `plan` holds
/// the probabilities the draws were made with.
pub fn incremental_noise_sample(
    instance: &ProblemInstance,
    w_prev: &[f64],
    participants: &SampleDraw,
    traces: &[LocalTrace],
    plan: &ProbabilityPlan,
) -> Result<Vec<f64>> {
    if traces.len() != participants.len() {
        return Err(Error::DimensionMismatch {
            expected: participants.len(),
            found: traces.len(),
        });
    }
    let kf = instance.num_agents() as f64;
    let l = participants.len() as f64;
    let mut q = vec![0.0; instance.dim()];
    for (&k, trace) in participants.indices.iter().zip(traces) {
        let e = trace.batches.len() as f64;
        let nk = instance.samples(k) as f64;
        let pk = plan.agents.get(k);
        for (epoch, batch) in trace.batches.iter().enumerate() {
            let start = &trace.iterates[epoch];
            let b = batch.len() as f64;
            for &n in &batch.indices {
                let pn = plan.data[k].get(n);
                if pn <= 0.0 || pk <= 0.0 {
                    return Err(Error::ZeroProbabilityDrawn { index: n });
                }
                let scale = 1.0 / (l * kf * pk * e * b * nk * pn);
                instance.accumulate_sample_gradient(k, n, start, scale, &mut q);
                instance.accumulate_sample_gradient(k, n, w_prev, -scale, &mut q);
            }
        }
    }
    Ok(q)
}
