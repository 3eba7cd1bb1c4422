//! Risk functions: ridge least squares and ridge logistic regression.
//!
//! Each agent `k` owns a dataset `{(u_n, y_n)}` and the local risk
//! `P_k(w) = (1/N_k) Σ_n Q_k(w; u_n, y_n)`. The ridge penalty `ρ‖w‖²` is
//! carried by every per-sample loss, so averaging per-sample gradients gives
//! `∇P_k` exactly.

mod libsvm;
mod partition;
mod regression;

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub use libsvm::{load_libsvm, parse_libsvm};
pub use partition::{generate_logistic_pool, label_entropy, partition_non_iid, LogisticPoolSpec};
pub use regression::{generate_regression, FeatureCovariance, NoiseProfile, RegressionSpec};

/// Condition numbers above this make the normal equations unusable.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance_squared(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl Deref for ModelVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Samples held by one agent. Features are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentDataset {
    pub agent_id: usize,
    dim: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl AgentDataset {
    pub fn new(agent_id: usize, rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::Empty)?;
        if rows.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: targets.len(),
            });
        }
        let mut features = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            features.extend_from_slice(r);
        }
        Ok(Self {
            agent_id,
            dim,
            features,
            targets,
        })
    }

    pub(crate) fn from_flat(agent_id: usize, dim: usize, features: Vec<f64>, targets: Vec<f64>) -> Self {
        debug_assert_eq!(features.len(), dim * targets.len());
        Self {
            agent_id,
            dim,
            features,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.features[n * self.dim..(n + 1) * self.dim]
    }

    pub fn target(&self, n: usize) -> f64 {
        self.targets[n]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select(&self, agent_id: usize, rows: &[usize]) -> Self {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut targets = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            targets.push(self.targets[r]);
        }
        Self::from_flat(agent_id, self.dim, features, targets)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Regression,
    Logistic,
}

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    agents: Vec<AgentDataset>,
    ridge: f64,
    kind: ProblemKind,
    planted_model: Option<ModelVector>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ProblemInstance {
    pub fn new(
        agents: Vec<AgentDataset>,
        ridge: f64,
        kind: ProblemKind,
        planted_model: Option<ModelVector>,
    ) -> Result<Self> {
        let dim = agents.first().map(AgentDataset::dim).ok_or(Error::Empty)?;
        if let Some(a) = agents.iter().find(|a| a.is_empty()) {
            return Err(Error::Config(format!("agent {} holds no samples", a.agent_id)));
        }
        if let Some(a) = agents.iter().find(|a| a.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: a.dim(),
            });
        }
        if !(ridge >= 0.0) {
            return Err(Error::Config(format!("ridge must be non-negative, got {ridge}")));
        }
        if kind == ProblemKind::Logistic {
            if let Some(a) = agents.iter().find(|a| a.targets().iter().any(|&y| y != 1.0 && y != -1.0)) {
                return Err(Error::Config(format!("agent {} has labels outside {{-1, +1}}", a.agent_id)));
            }
        }
        Ok(Self {
            agents,
            ridge,
            kind,
            planted_model,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.agents[0].dim()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn planted_model(&self) -> Option<&ModelVector> {
        self.planted_model.as_ref()
    }

    pub fn agents(&self) -> &[AgentDataset] {
        &self.agents
    }

    pub fn agent(&self, k: usize) -> &AgentDataset {
        &self.agents[k]
    }

    pub fn samples(&self, k: usize) -> usize {
        self.agents[k].len()
    }

    fn check(&self, k: usize, n: Option<usize>, w: &[f64]) -> Result<()> {
        if k >= self.agents.len() {
            return Err(Error::IndexOutOfRange(format!("agent {k} of {}", self.agents.len())));
        }
        if let Some(n) = n {
            if n >= self.agents[k].len() {
                return Err(Error::IndexOutOfRange(format!(
                    "sample {n} of {} at agent {k}",
                    self.agents[k].len()
                )));
            }
        }
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: w.len(),
            });
        }
        Ok(())
    }

    /// Per-sample loss `Q_k(w; x_{k,n})`, ridge included.
    pub fn loss(&self, k: usize, n: usize, w: &[f64]) -> Result<f64> {
        self.check(k, Some(n), w)?;
        let a = &self.agents[k];
        let (u, y) = (a.row(n), a.target(n));
        let penalty = self.ridge * dot(w, w);
        Ok(match self.kind {
            ProblemKind::Regression => (y - dot(u, w)).powi(2) + penalty,
            ProblemKind::Logistic => softplus(-y * dot(u, w)) + penalty,
        })
    }

    /// Coefficient `c` such that the data part of `∇Q_k(w; x_{k,n})` is `c·u_n`.
    #[inline]
    fn residual_weight(&self, u: &[f64], y: f64, w: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Regression => 2.0 * (dot(u, w) - y),
            ProblemKind::Logistic => -y * sigmoid(-y * dot(u, w)),
        }
    }

    /// `out += scale · ∇Q_k(w; x_{k,n})`. Indices are not checked.
    #[inline]
    pub fn accumulate_sample_gradient(&self, k: usize, n: usize, w: &[f64], scale: f64, out: &mut [f64]) {
        let a = &self.agents[k];
        let u = a.row(n);
        let c = scale * self.residual_weight(u, a.target(n), w);
        let r = scale * 2.0 * self.ridge;
        for ((o, ui), wi) in out.iter_mut().zip(u).zip(w) {
            *o += c * ui + r * wi;
        }
    }

    pub fn sample_gradient(&self, k: usize, n: usize, w: &[f64]) -> Result<Vec<f64>> {
        self.check(k, Some(n), w)?;
        let mut g = vec![0.0; self.dim()];
        self.accumulate_sample_gradient(k, n, w, 1.0, &mut g);
        Ok(g)
    }

    /// `‖∇Q_k(w; x_{k,n})‖` without allocating. Indices are not checked.
    #[inline]
    pub fn sample_gradient_norm(&self, k: usize, n: usize, w: &[f64]) -> f64 {
        let a = &self.agents[k];
        let u = a.row(n);
        let c = self.residual_weight(u, a.target(n), w);
        let r = 2.0 * self.ridge;
        u.iter()
            .zip(w)
            .map(|(ui, wi)| {
                let g = c * ui + r * wi;
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `∇P_k(w)`, the average of the per-sample gradients of agent `k`.
    pub fn local_gradient(&self, k: usize, w: &[f64]) -> Result<Vec<f64>> {
        self.check(k, None, w)?;
        let nk = self.agents[k].len();
        let mut g = vec![0.0; self.dim()];
        let scale = 1.0 / nk as f64;
        for n in 0..nk {
            self.accumulate_sample_gradient(k, n, w, scale, &mut g);
        }
        Ok(g)
    }

    /// `(1/K) Σ_k ∇P_k(w)`.
    pub fn global_gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let kf = self.num_agents() as f64;
        let mut g = vec![0.0; self.dim()];
        for k in 0..self.num_agents() {
            for (a, b) in g.iter_mut().zip(self.local_gradient(k, w)?) {
                *a += b / kf;
            }
        }
        Ok(g)
    }

    pub fn local_risk(&self, k: usize, w: &[f64]) -> Result<f64> {
        let nk = self.samples(k);
        let mut total = 0.0;
        for n in 0..nk {
            total += self.loss(k, n, w)?;
        }
        Ok(total / nk as f64)
    }

    pub fn global_risk(&self, w: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..self.num_agents() {
            total += self.local_risk(k, w)?;
        }
        Ok(total / self.num_agents() as f64)
    }

    /// Second moments `(1/N_k) Σ u uᵀ` and `(1/N_k) Σ y u` of one agent.
    pub fn agent_moments(&self, k: usize) -> (DMatrix<f64>, DVector<f64>) {
        let a = &self.agents[k];
        let m = a.dim();
        let mut r = DMatrix::<f64>::zeros(m, m);
        let mut c = DVector::<f64>::zeros(m);
        for n in 0..a.len() {
            let u = a.row(n);
            let y = a.target(n);
            for i in 0..m {
                c[i] += y * u[i];
                for j in 0..m {
                    r[(i, j)] += u[i] * u[j];
                }
            }
        }
        let inv = 1.0 / a.len() as f64;
        (r * inv, c * inv)
    }

    /// Pooled double averages `R̂_u` and `r̂_du` over all agents.
    pub fn pooled_moments(&self) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.dim();
        let mut r = DMatrix::<f64>::zeros(m, m);
        let mut c = DVector::<f64>::zeros(m);
        for k in 0..self.num_agents() {
            let (rk, ck) = self.agent_moments(k);
            r += rk;
            c += ck;
        }
        let inv = 1.0 / self.num_agents() as f64;
        (r * inv, c * inv)
    }

    fn require_regression(&self) -> Result<()> {
        match self.kind {
            ProblemKind::Regression => Ok(()),
            ProblemKind::Logistic => Err(Error::UnsupportedScheme {
                scheme: "closed-form minimizer".into(),
                reason: "logistic risk has no closed form".into(),
            }),
        }
    }

    /// Global minimizer `(R̂_u + ρI)⁻¹ r̂_du` of the regression risk.
    pub fn closed_form_minimizer(&self) -> Result<ModelVector> {
        self.require_regression()?;
        let (r, c) = self.pooled_moments();
        solve_ridge(r, c, self.ridge)
    }

    /// Minimizer of `P_k` alone.
    pub fn local_minimizer(&self, k: usize) -> Result<ModelVector> {
        self.require_regression()?;
        if k >= self.num_agents() {
            return Err(Error::IndexOutOfRange(format!("agent {k}")));
        }
        let (r, c) = self.agent_moments(k);
        solve_ridge(r, c, self.ridge)
    }
}

fn solve_ridge(r: DMatrix<f64>, c: DVector<f64>, ridge: f64) -> Result<ModelVector> {
    let m = r.nrows();
    let a = r + DMatrix::<f64>::identity(m, m) * ridge;
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularSystem { condition });
    }
    let sol = a
        .cholesky()
        .ok_or(Error::SingularSystem { condition })?
        .solve(&c);
    Ok(ModelVector::from(sol.iter().copied().collect::<Vec<_>>()))
}
