use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{AgentDataset, ModelVector, ProblemInstance, ProblemKind};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureCovariance {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl FeatureCovariance {
    /// Diagonal covariance with entries log-uniform in `[lo, hi]`.
    pub fn log_uniform_diagonal<R: Rng + ?Sized>(dim: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::Diagonal((0..dim).map(|_| log_uniform(lo, hi, rng)).collect())
    }

    /// Lower-triangular factor `C` with `C Cᵀ` equal to the covariance.
    fn factor(&self, agent: usize, dim: usize) -> Result<DMatrix<f64>> {
        let invalid = |reason: String| Error::InvalidCovariance { agent, reason };
        match self {
            Self::Diagonal(d) => {
                if d.len() != dim {
                    return Err(invalid(format!("{} diagonal entries for dimension {dim}", d.len())));
                }
                if let Some(v) = d.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    return Err(invalid(format!("diagonal entry {v} is not a variance")));
                }
                Ok(DMatrix::from_diagonal(&d.iter().map(|v| v.sqrt()).collect::<Vec<_>>().into()))
            }
            Self::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(invalid(format!("matrix is not {dim}x{dim}")));
                }
                let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
                if (0..dim).any(|i| (0..i).any(|j| (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * m.amax().max(1.0))) {
                    return Err(invalid("matrix is not symmetric".into()));
                }
                m.cholesky()
                    .map(|c| c.unpack())
                    .ok_or_else(|| invalid("matrix is not positive definite".into()))
            }
        }
    }
}

/// Draws from `[lo, hi]` uniformly on a log scale; `lo == hi` returns `lo` without touching `rng`.
pub(crate) fn log_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if lo == hi {
        lo
    } else {
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSpec {
    /// `N_k` per agent; its length is `K`.
    pub samples: Vec<usize>,
    pub dim: usize,
    pub ridge: f64,
    pub noise_variances: Vec<f64>,
    pub feature_covariances: Vec<FeatureCovariance>,
}

/// How per-agent noise variances `σ_{v,k}²` are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseProfile {
    /// Log-uniform in `[lo, hi]`.
    LogUniform { lo: f64, hi: f64 },
    /// `round(fraction · K)` agents, chosen at random, get `high`; the rest
    /// are log-uniform in `[lo, hi]`.
    Outliers { lo: f64, hi: f64, high: f64, fraction: f64 },
}

impl NoiseProfile {
    pub fn draw<R: Rng + ?Sized>(&self, agents: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            Self::LogUniform { lo, hi } => (0..agents).map(|_| log_uniform(lo, hi, rng)).collect(),
            Self::Outliers { lo, hi, high, fraction } => {
                let mut v: Vec<f64> = (0..agents).map(|_| log_uniform(lo, hi, rng)).collect();
                let count = ((fraction * agents as f64).round() as usize).min(agents);
                for k in rand::seq::index::sample(rng, agents, count) {
                    v[k] = high;
                }
                v
            }
        }
    }
}

impl RegressionSpec {
    /// Per-agent diagonal covariances log-uniform in `[0.5, 2]` and noise
    /// variances log-uniform in `noise_range`.
    pub fn heterogeneous<R: Rng + ?Sized>(
        agents: usize,
        samples: usize,
        dim: usize,
        ridge: f64,
        noise_range: (f64, f64),
        rng: &mut R,
    ) -> Self {
        let noise = NoiseProfile::LogUniform {
            lo: noise_range.0,
            hi: noise_range.1,
        };
        Self::random(agents, samples, dim, ridge, noise, (0.5, 2.0), rng)
    }

    /// Per-agent diagonal covariances with entries log-uniform in
    /// `feature_range`, then per-agent noise variances from `noise`.
    pub fn random<R: Rng + ?Sized>(
        agents: usize,
        samples: usize,
        dim: usize,
        ridge: f64,
        noise: NoiseProfile,
        feature_range: (f64, f64),
        rng: &mut R,
    ) -> Self {
        let feature_covariances = (0..agents)
            .map(|_| FeatureCovariance::log_uniform_diagonal(dim, feature_range.0, feature_range.1, rng))
            .collect();
        Self {
            samples: vec![samples; agents],
            dim,
            ridge,
            noise_variances: noise.draw(agents, rng),
            feature_covariances,
        }
    }
}

/// Draws `w* ~ N(0, I)` then, per agent, features `u = C z` and targets `d = uᵀw* + v`.
pub fn generate_regression<R: Rng + ?Sized>(spec: &RegressionSpec, rng: &mut R) -> Result<ProblemInstance> {
    let k = spec.samples.len();
    let m = spec.dim;
    if k == 0 || m == 0 || spec.samples.contains(&0) {
        return Err(Error::Config("agent count, sample counts and dimension must be positive".into()));
    }
    if spec.noise_variances.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: spec.noise_variances.len(),
        });
    }
    if spec.feature_covariances.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: spec.feature_covariances.len(),
        });
    }
    if let Some(v) = spec.noise_variances.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::Config(format!("noise variance {v} is not a variance")));
    }
    let factors = spec
        .feature_covariances
        .iter()
        .enumerate()
        .map(|(a, c)| c.factor(a, m))
        .collect::<Result<Vec<_>>>()?;

    let planted: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let mut agents = Vec::with_capacity(k);
    let mut z = vec![0.0; m];
    for (a, factor) in factors.iter().enumerate() {
        let nk = spec.samples[a];
        let sd = spec.noise_variances[a].sqrt();
        let mut features = Vec::with_capacity(nk * m);
        let mut targets = Vec::with_capacity(nk);
        for _ in 0..nk {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let start = features.len();
            for i in 0..m {
                features.push((0..=i).map(|j| factor[(i, j)] * z[j]).sum::<f64>());
            }
            let u = &features[start..];
            let noise: f64 = rng.sample(StandardNormal);
            targets.push(u.iter().zip(&planted).map(|(x, w)| x * w).sum::<f64>() + sd * noise);
        }
        agents.push(AgentDataset::from_flat(a, m, features, targets));
    }
    ProblemInstance::new(agents, spec.ridge, ProblemKind::Regression, Some(ModelVector::from(planted)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn identical_seed_identical_instance() {
        let spec = RegressionSpec::heterogeneous(4, 10, 3, 0.001, (0.01, 1.0), &mut stream(&[1]));
        let a = generate_regression(&spec, &mut stream(&[2])).unwrap();
        let b = generate_regression(&spec, &mut stream(&[2])).unwrap();
        assert_eq!(a.agents(), b.agents());
        assert_eq!(a.planted_model(), b.planted_model());
    }

    #[test]
    fn paper_scale_shape() {
        let spec = RegressionSpec::heterogeneous(300, 100, 2, 0.001, (0.01, 1.0), &mut stream(&[3]));
        let inst = generate_regression(&spec, &mut stream(&[4])).unwrap();
        assert_eq!(inst.num_agents(), 300);
        assert!(inst.agents().iter().all(|a| a.len() == 100 && a.dim() == 2));
    }

    #[test]
    fn sample_covariance_tracks_full_covariance_matrix() {
        let cov = vec![vec![2.0, 0.6], vec![0.6, 0.5]];
        let spec = RegressionSpec {
            samples: vec![20000],
            dim: 2,
            ridge: 0.0,
            noise_variances: vec![0.0],
            feature_covariances: vec![FeatureCovariance::Full(cov.clone())],
        };
        let inst = generate_regression(&spec, &mut stream(&[5])).unwrap();
        let (r, _) = inst.agent_moments(0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((r[(i, j)] - cov[i][j]).abs() < 0.08, "{i}{j}: {}", r[(i, j)]);
            }
        }
    }

    #[test]
    fn outlier_profile_counts() {
        let profile = NoiseProfile::Outliers {
            lo: 1e-6,
            hi: 1e-4,
            high: 1.0,
            fraction: 0.05,
        };
        let v = profile.draw(300, &mut stream(&[6]));
        assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 15);
        assert!(v.iter().filter(|&&x| x != 1.0).all(|&x| (1e-6..=1e-4).contains(&x)));
        let none = NoiseProfile::Outliers {
            lo: 1e-6,
            hi: 1e-4,
            high: 1.0,
            fraction: 0.0,
        };
        assert!(none.draw(10, &mut stream(&[6])).iter().all(|&x| x <= 1e-4));
    }

    #[test]
    fn invalid_covariances_are_rejected() {
        let bad = [
            FeatureCovariance::Diagonal(vec![1.0]),
            FeatureCovariance::Diagonal(vec![1.0, -1.0]),
            FeatureCovariance::Full(vec![vec![1.0, 2.0], vec![2.0, 1.0]]),
            FeatureCovariance::Full(vec![vec![1.0, 0.5], vec![0.0, 1.0]]),
        ];
        for c in bad {
            let spec = RegressionSpec {
                samples: vec![5],
                dim: 2,
                ridge: 0.0,
                noise_variances: vec![0.1],
                feature_covariances: vec![c],
            };
            assert!(matches!(
                generate_regression(&spec, &mut stream(&[0])),
                Err(Error::InvalidCovariance { agent: 0, .. })
            ));
        }
    }
}
