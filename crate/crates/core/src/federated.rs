//! The federated training loop.
//!
//! Iteration `i` draws participants `𝓛_i` from `p_k`. Each participant runs
//! `E_k` epochs from the shared iterate, each epoch a Horvitz-Thompson
//! weighted mini-batch step
//! `w ← w − μ/(E_k K p_k) · (1/B_k) Σ_b ∇Q_k(w; x_b)/(N_k p_b)`,
//! and the server averages the `L` local results with equal weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{ModelVector, ProblemInstance, ProblemKind};
use crate::probabilities::{probabilities_at, sample_gradient_norms, data_variability, AdaptiveState, ProbabilityPlan};
use crate::rng::{stream, tag, SimRng};
use crate::sampling::{
    sample_with_replacement, systematic_sample_without_replacement, ProbabilityVector, Replacement, SampleDraw,
};

/// Floor applied to every probability before it enters an importance weight.
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Uniform probabilities: plain FedAvg.
    Uniform,
    /// Optimal probabilities evaluated at `w^o`.
    Optimal,
    /// Optimal formulas re-evaluated at every iterate.
    Plugin,
    /// Partial updates of the sampled entries only.
    Adaptive,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Uniform, Scheme::Optimal, Scheme::Plugin, Scheme::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Uniform => "uniform",
            Scheme::Optimal => "optimal",
            Scheme::Plugin => "plugin",
            Scheme::Adaptive => "adaptive",
        }
    }

    /// Uniform draws with replacement like classic FedAvg; the others use systematic sampling.
    pub fn default_replacement(self) -> Replacement {
        match self {
            Scheme::Uniform => Replacement::With,
            _ => Replacement::Without,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederationConfig {
    /// `L`, participants per iteration.
    pub participants: usize,
    /// `E_k` per agent.
    pub epochs: Vec<usize>,
    /// `B_k` per agent.
    pub batches: Vec<usize>,
    pub step_size: f64,
    pub iterations: usize,
    pub scheme: Scheme,
    pub replacement: Replacement,
    pub seed: u64,
    pub floor: f64,
    /// `w_0`; zero when absent.
    pub initial: Option<ModelVector>,
    /// Store the realized gradient error `s_i` in every record.
    pub record_gradient_noise: bool,
}

impl FederationConfig {
    /// Same `E_k` and `B_k` at every agent.
    pub fn homogeneous(
        agents: usize,
        participants: usize,
        epochs: usize,
        batch: usize,
        step_size: f64,
        iterations: usize,
        scheme: Scheme,
    ) -> Self {
        Self {
            participants,
            epochs: vec![epochs; agents],
            batches: vec![batch; agents],
            step_size,
            iterations,
            scheme,
            replacement: scheme.default_replacement(),
            seed: 0,
            floor: DEFAULT_FLOOR,
            initial: None,
            record_gradient_noise: false,
        }
    }

    pub fn validate(&self, instance: &ProblemInstance) -> Result<()> {
        let k = instance.num_agents();
        let bad = |m: String| Err(Error::Config(m));
        if self.participants == 0 || self.participants > k {
            return bad(format!("need 1 <= L <= K = {k}, got L = {}", self.participants));
        }
        if self.epochs.len() != k || self.batches.len() != k {
            return bad(format!(
                "expected {k} epoch counts and batch sizes, got {} and {}",
                self.epochs.len(),
                self.batches.len()
            ));
        }
        if let Some(a) = (0..k).find(|&a| self.epochs[a] == 0) {
            return bad(format!("agent {a} has zero epochs"));
        }
        if let Some(a) = (0..k).find(|&a| self.batches[a] == 0 || self.batches[a] > instance.samples(a)) {
            return bad(format!(
                "agent {a} has batch size {} for {} samples",
                self.batches[a],
                instance.samples(a)
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size must be positive, got {}", self.step_size));
        }
        if !(0.0..1.0).contains(&self.floor) {
            return bad(format!("probability floor must lie in [0, 1), got {}", self.floor));
        }
        if let Some(w) = &self.initial {
            if w.len() != instance.dim() {
                return Err(Error::DimensionMismatch {
                    expected: instance.dim(),
                    found: w.len(),
                });
            }
        }
        Ok(())
    }
}

/// Caps `p` so `batch · p_n ≤ 1` when drawing without replacement, then floors it.
///
/// Flooring last keeps every entry positive: renormalizing after the floor
/// only shrinks entries, so the cap still holds. The result is used both to
/// draw and to weight, so the estimator stays unbiased.
pub fn effective_probabilities(
    p: &ProbabilityVector,
    batch: usize,
    replacement: Replacement,
    floor: f64,
) -> Result<ProbabilityVector> {
    match replacement {
        Replacement::With => Ok(p.with_floor(floor)),
        Replacement::Without => Ok(p.capped_for_batch(batch)?.with_floor(floor)),
    }
}

/// Systematic sampling without replacement, independent draws with it.
pub fn draw<R: rand::Rng + ?Sized>(
    p: &ProbabilityVector,
    count: usize,
    replacement: Replacement,
    rng: &mut R,
) -> Result<SampleDraw> {
    match replacement {
        Replacement::With => Ok(sample_with_replacement(p, count, rng)),
        Replacement::Without => systematic_sample_without_replacement(p, count, rng),
    }
}

/// Settings for one agent's local run.
#[derive(Clone, Copy, Debug)]
pub struct LocalPlan<'a> {
    pub epochs: usize,
    pub batch: usize,
    pub step_size: f64,
    /// `p_k` of the running agent, as used to draw it.
    pub agent_prob: f64,
    /// `K`.
    pub agents: usize,
    /// `p_n^{(k)}`, as used to draw the batches.
    pub data_probs: &'a ProbabilityVector,
    pub replacement: Replacement,
}

/// Local iterates `w_{k,0} .. w_{k,E_k}` and the batch drawn at each epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTrace {
    pub iterates: Vec<ModelVector>,
    pub batches: Vec<SampleDraw>,
}

impl LocalTrace {
    pub fn last(&self) -> &ModelVector {
        self.iterates.last().expect("trace holds w_start")
    }
}

/// `out += scale · (1/B) Σ_b ∇Q_k(w; x_b)/(N_k p_b)`.
fn accumulate_batch_estimate(
    instance: &ProblemInstance,
    k: usize,
    w: &[f64],
    batch: &SampleDraw,
    data_probs: &ProbabilityVector,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    let nk = instance.samples(k) as f64;
    let b = batch.len() as f64;
    for &n in &batch.indices {
        let pn = data_probs.get(n);
        if pn <= 0.0 {
            return Err(Error::ZeroProbabilityDrawn { index: n });
        }
        instance.accumulate_sample_gradient(k, n, w, scale / (b * nk * pn), out);
    }
    Ok(())
}

pub fn local_run(
    instance: &ProblemInstance,
    k: usize,
    w_start: &[f64],
    plan: &LocalPlan<'_>,
    rng: &mut SimRng,
) -> Result<LocalTrace> {
    if k >= instance.num_agents() {
        return Err(Error::IndexOutOfRange(format!("agent {k}")));
    }
    if plan.agent_prob <= 0.0 {
        return Err(Error::ZeroProbabilityDrawn { index: k });
    }
    let scale = -plan.step_size / (plan.epochs as f64 * plan.agents as f64 * plan.agent_prob);
    let mut iterates = Vec::with_capacity(plan.epochs + 1);
    let mut batches = Vec::with_capacity(plan.epochs);
    let mut w = w_start.to_vec();
    iterates.push(ModelVector::from(w.clone()));
    for _ in 0..plan.epochs {
        let batch = draw(plan.data_probs, plan.batch, plan.replacement, rng)?;
        let mut next = w.clone();
        accumulate_batch_estimate(instance, k, &w, &batch, plan.data_probs, scale, &mut next)?;
        w = next;
        iterates.push(ModelVector::from(w.clone()));
        batches.push(batch);
    }
    Ok(LocalTrace { iterates, batches })
}

/// `∇̂P_k(w) = (1/(E_k B_k)) Σ_e Σ_b ∇Q_k(w; x_b)/(N_k p_b)` over the given batches, at fixed `w`.
pub fn local_gradient_estimate(
    instance: &ProblemInstance,
    k: usize,
    w: &[f64],
    batches: &[SampleDraw],
    data_probs: &ProbabilityVector,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; instance.dim()];
    let e = batches.len() as f64;
    for batch in batches {
        accumulate_batch_estimate(instance, k, w, batch, data_probs, 1.0 / e, &mut out)?;
    }
    Ok(out)
}

/// Realized gradient error
/// `s = (1/L) Σ_ℓ ∇̂P_ℓ(w)/(K p_ℓ) − (1/K) Σ_k ∇P_k(w)`.
///
/// `epoch_plan[j]` holds the batches of the `j`-th entry of `agents`;
/// `plan` must hold the probabilities the draws were made with.
pub fn gradient_noise_sample(
    instance: &ProblemInstance,
    w: &[f64],
    agents: &SampleDraw,
    plan: &ProbabilityPlan,
    epoch_plan: &[Vec<SampleDraw>],
    global_gradient: &[f64],
) -> Result<Vec<f64>> {
    if epoch_plan.len() != agents.len() {
        return Err(Error::DimensionMismatch {
            expected: agents.len(),
            found: epoch_plan.len(),
        });
    }
    let kf = instance.num_agents() as f64;
    let l = agents.len() as f64;
    let mut s: Vec<f64> = global_gradient.iter().map(|g| -g).collect();
    for (&k, batches) in agents.indices.iter().zip(epoch_plan) {
        let pk = plan.agents.get(k);
        if pk <= 0.0 {
            return Err(Error::ZeroProbabilityDrawn { index: k });
        }
        let est = local_gradient_estimate(instance, k, w, batches, &plan.data[k])?;
        for (si, gi) in s.iter_mut().zip(est) {
            *si += gi / (l * kf * pk);
        }
    }
    Ok(s)
}

/// One outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// `i`, counted from 1.
    pub iteration: usize,
    pub iterate: ModelVector,
    pub participants: SampleDraw,
    /// `‖w_i − w^o‖²`; absent when no closed-form optimum exists.
    pub msd: Option<f64>,
    pub realized_gradient_noise: Option<Vec<f64>>,
}

/// A training run advanced one iteration at a time.
#[derive(Clone, Debug)]
pub struct Simulation<'a> {
    instance: &'a ProblemInstance,
    config: FederationConfig,
    w: ModelVector,
    iteration: usize,
    optimum: Option<ModelVector>,
    /// Effective probabilities for the uniform and optimal schemes.
    fixed: Option<ProbabilityPlan>,
    adaptive: Option<AdaptiveState>,
}

impl<'a> Simulation<'a> {
    pub fn new(instance: &'a ProblemInstance, config: FederationConfig) -> Result<Self> {
        config.validate(instance)?;
        let optimum = match instance.kind() {
            ProblemKind::Regression => Some(instance.closed_form_minimizer()?),
            ProblemKind::Logistic => None,
        };
        let raw_fixed = match config.scheme {
            Scheme::Uniform => Some(ProbabilityPlan::uniform(instance)),
            Scheme::Optimal => {
                let wo = optimum.as_ref().ok_or_else(|| Error::UnsupportedScheme {
                    scheme: Scheme::Optimal.to_string(),
                    reason: "no closed-form optimum for a logistic risk".into(),
                })?;
                Some(probabilities_at(instance, wo, &config.epochs, &config.batches)?)
            }
            Scheme::Plugin | Scheme::Adaptive => None,
        };
        let fixed = raw_fixed.map(|p| effective_plan(&p, &config)).transpose()?;
        let adaptive = (config.scheme == Scheme::Adaptive)
            .then(|| AdaptiveState::uniform(instance, &config.epochs, &config.batches));
        let w = config.initial.clone().unwrap_or_else(|| ModelVector::zeros(instance.dim()));
        Ok(Self {
            instance,
            config,
            w,
            iteration: 0,
            optimum,
            fixed,
            adaptive,
        })
    }

    pub fn iterate(&self) -> &ModelVector {
        &self.w
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn optimum(&self) -> Option<&ModelVector> {
        self.optimum.as_ref()
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn adaptive_state(&self) -> Option<&AdaptiveState> {
        self.adaptive.as_ref()
    }

    /// Probabilities the next iteration will draw with, before flooring and capping.
    pub fn current_plan(&self) -> Result<ProbabilityPlan> {
        match (&self.fixed, &self.adaptive) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(st)) => Ok(st.plan()),
            (None, None) => probabilities_at(self.instance, &self.w, &self.config.epochs, &self.config.batches),
        }
    }

    pub fn step(&mut self) -> Result<IterationRecord> {
        let cfg = &self.config;
        let inst = self.instance;
        let i = self.iteration + 1;
        let kf = inst.num_agents();

        let raw = if self.fixed.is_none() { Some(self.current_plan()?) } else { None };
        let agents = match (&self.fixed, &raw) {
            (Some(p), _) => p.agents.clone(),
            (None, Some(r)) => effective_probabilities(&r.agents, cfg.participants, cfg.replacement, cfg.floor)?,
            (None, None) => unreachable!(),
        };
        let participants = draw(&agents, cfg.participants, cfg.replacement, &mut stream(&[cfg.seed, tag::AGENTS, i as u64]))?;

        let mut traces = Vec::with_capacity(participants.len());
        let mut used_data = Vec::with_capacity(participants.len());
        for (slot, &k) in participants.indices.iter().enumerate() {
            let data_probs = match (&self.fixed, &raw) {
                (Some(p), _) => p.data[k].clone(),
                (None, Some(r)) => effective_probabilities(&r.data[k], cfg.batches[k], cfg.replacement, cfg.floor)?,
                (None, None) => unreachable!(),
            };
            let plan = LocalPlan {
                epochs: cfg.epochs[k],
                batch: cfg.batches[k],
                step_size: cfg.step_size,
                agent_prob: agents.get(k),
                agents: kf,
                data_probs: &data_probs,
                replacement: cfg.replacement,
            };
            let mut rng = stream(&[cfg.seed, tag::LOCAL, i as u64, k as u64, slot as u64]);
            traces.push(local_run(inst, k, &self.w, &plan, &mut rng)?);
            used_data.push(data_probs);
        }

        let mut next = vec![0.0; inst.dim()];
        let inv_l = 1.0 / participants.len() as f64;
        for t in &traces {
            for (a, b) in next.iter_mut().zip(t.last().iter()) {
                *a += b * inv_l;
            }
        }
        let next = ModelVector::from(next);
        if !next.is_finite() {
            return Err(Error::Diverged { iteration: i });
        }

        let realized_gradient_noise = if cfg.record_gradient_noise {
            let mut data = vec![ProbabilityVector::uniform(1); kf];
            for (&k, p) in participants.indices.iter().zip(&used_data) {
                data[k] = p.clone();
            }
            let plan = ProbabilityPlan {
                agents: agents.clone(),
                data,
            };
            let epoch_plan: Vec<Vec<SampleDraw>> = traces.iter().map(|t| t.batches.clone()).collect();
            let global = inst.global_gradient(&self.w)?;
            Some(gradient_noise_sample(inst, &self.w, &participants, &plan, &epoch_plan, &global)?)
        } else {
            None
        };

        if let Some(st) = self.adaptive.as_mut() {
            let mut agent_norms = Vec::with_capacity(participants.len());
            for ((&k, t), p) in participants.indices.iter().zip(&traces).zip(&used_data) {
                let est = local_gradient_estimate(inst, k, &self.w, &t.batches, p)?;
                agent_norms.push(est.iter().map(|v| v * v).sum::<f64>().sqrt());

                let all_norms = sample_gradient_norms(inst, k, &self.w);
                let mut sampled: Vec<usize> = t.batches.iter().flat_map(|b| b.indices.iter().copied()).collect();
                sampled.sort_unstable();
                sampled.dedup();
                let scores: Vec<f64> = sampled.iter().map(|&n| all_norms[n]).collect();
                let batch = SampleDraw {
                    indices: sampled,
                    replacement: cfg.replacement,
                };
                st.update_data_probabilities(k, &batch, &scores, cfg.floor)?;
                st.sigma_sk[k] = data_variability(&all_norms, &st.data_probs[k], cfg.epochs[k], cfg.batches[k]);
            }
            st.update_agent_probabilities(&participants, &agent_norms, cfg.floor)?;
        }

        let msd = self.optimum.as_ref().map(|o| next.distance_squared(o));
        self.w = next;
        self.iteration = i;
        Ok(IterationRecord {
            iteration: i,
            iterate: self.w.clone(),
            participants,
            msd,
            realized_gradient_noise,
        })
    }
}

/// [`effective_probabilities`] applied to every vector of `raw`.
pub fn effective_plan(raw: &ProbabilityPlan, config: &FederationConfig) -> Result<ProbabilityPlan> {
    Ok(ProbabilityPlan {
        agents: effective_probabilities(&raw.agents, config.participants, config.replacement, config.floor)?,
        data: raw
            .data
            .iter()
            .zip(&config.batches)
            .map(|(p, &b)| effective_probabilities(p, b, config.replacement, config.floor))
            .collect::<Result<_>>()?,
    })
}

/// Runs `config.iterations` iterations from `w_0`.
pub fn train(instance: &ProblemInstance, config: &FederationConfig) -> Result<Vec<IterationRecord>> {
    let mut sim = Simulation::new(instance, config.clone())?;
    (0..config.iterations).map(|_| sim.step()).collect()
}
