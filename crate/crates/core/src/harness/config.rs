//! Flat TOML experiment files.
//!
//! Every key is optional except `problem`; unset keys take the defaults of
//! the chosen problem family. Command-line flags are applied on top through
//! [`Overrides`].

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::federated::{Scheme, DEFAULT_FLOOR};
use crate::problems::{LogisticPoolSpec, NoiseProfile};
use crate::sampling::Replacement;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemFamily {
    Regression,
    Classification,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: Option<ProblemFamily>,
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
    /// Fixed horizon; when absent the horizon is found from the uniform scheme's plateau.
    pub iterations: Option<usize>,
    pub max_iterations: Option<usize>,
    pub schemes: Option<Vec<Scheme>>,
    pub replacement: Option<Replacement>,
    pub output: Option<PathBuf>,

    pub agents: Option<usize>,
    pub participants: Option<usize>,
    pub step_size: Option<f64>,
    pub ridge: Option<f64>,
    pub epochs_min: Option<usize>,
    pub epochs_max: Option<usize>,
    pub batch_min: Option<usize>,
    pub batch_max: Option<usize>,
    pub floor: Option<f64>,

    pub samples: Option<usize>,
    pub dim: Option<usize>,
    pub noise_variance_min: Option<f64>,
    pub noise_variance_max: Option<f64>,
    /// Fraction of agents whose noise variance is `outlier_noise_variance`.
    pub outlier_fraction: Option<f64>,
    pub outlier_noise_variance: Option<f64>,
    pub feature_variance_min: Option<f64>,
    pub feature_variance_max: Option<f64>,

    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub features: Option<usize>,
    pub shard_min: Option<usize>,
    pub shard_max: Option<usize>,
    pub synthetic_train: Option<usize>,
    pub synthetic_test: Option<usize>,
    pub synthetic_dim: Option<usize>,
    pub synthetic_clusters: Option<usize>,
    pub synthetic_scale_min: Option<f64>,
    pub synthetic_scale_max: Option<f64>,
    pub synthetic_sharpness: Option<f64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Command-line values that win over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub schemes: Vec<Scheme>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub repetitions: Option<usize>,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, file: &mut ConfigFile) {
        if !self.schemes.is_empty() {
            file.schemes = Some(self.schemes.clone());
        }
        if self.seed.is_some() {
            file.seed = self.seed;
        }
        if self.output.is_some() {
            file.output = self.output.clone();
        }
        if self.iterations.is_some() {
            file.iterations = self.iterations;
        }
        if self.repetitions.is_some() {
            file.repetitions = self.repetitions;
        }
        if self.train_path.is_some() {
            file.train_path = self.train_path.clone();
        }
        if self.test_path.is_some() {
            file.test_path = self.test_path.clone();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSpec {
    Regression {
        agents: usize,
        samples: usize,
        dim: usize,
        ridge: f64,
        noise: NoiseProfile,
        feature_variance: (f64, f64),
    },
    Classification {
        agents: usize,
        shard_size: (usize, usize),
        ridge: f64,
        source: DataSource,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// LIBSVM train and test files.
    Files {
        train: PathBuf,
        test: PathBuf,
        features: Option<usize>,
    },
    Synthetic(LogisticPoolSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    Fixed(usize),
    /// Plateau of the uniform scheme, capped at `max`.
    Auto { max: usize },
}

/// Everything needed to run one comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub problem: ProblemSpec,
    pub seed: u64,
    pub participants: usize,
    pub step_size: f64,
    pub epochs: (usize, usize),
    pub batches: (usize, usize),
    pub floor: f64,
    pub horizon: Horizon,
    pub schemes: Vec<Scheme>,
    /// `None` lets each scheme use its default mode.
    pub replacement: Option<Replacement>,
    pub repetitions: usize,
    pub output: Option<PathBuf>,
}

/// Plateau window and relative tolerance of the automatic horizon.
pub const PLATEAU_WINDOW: usize = 50;
pub const PLATEAU_TOLERANCE: f64 = 0.01;

/// Regression data profile used when the file does not set one: most agents
/// are nearly noiseless, one in ten carries unit-variance noise, and feature
/// variances spread over a factor of 25.
pub const DEFAULT_NOISE: (f64, f64) = (1e-6, 1e-2);
pub const DEFAULT_OUTLIER_FRACTION: f64 = 0.1;
pub const DEFAULT_OUTLIER_NOISE: f64 = 1.0;
pub const DEFAULT_FEATURE_VARIANCE: (f64, f64) = (0.2, 5.0);

fn pair<T: PartialOrd + Copy + std::fmt::Display>(lo: T, hi: T, name: &str) -> Result<(T, T)> {
    if lo > hi {
        return Err(Error::Config(format!("{name}_min = {lo} exceeds {name}_max = {hi}")));
    }
    Ok((lo, hi))
}

fn noise_profile(f: &ConfigFile) -> Result<NoiseProfile> {
    let (lo, hi) = pair(
        f.noise_variance_min.unwrap_or(DEFAULT_NOISE.0),
        f.noise_variance_max.unwrap_or(DEFAULT_NOISE.1),
        "noise_variance",
    )?;
    if !(lo > 0.0 && hi.is_finite()) {
        return Err(Error::Config(format!("noise variances must lie in (0, inf), got [{lo}, {hi}]")));
    }
    let fraction = f.outlier_fraction.unwrap_or(DEFAULT_OUTLIER_FRACTION);
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("outlier_fraction = {fraction} is not in [0, 1]")));
    }
    if fraction == 0.0 {
        return Ok(NoiseProfile::LogUniform { lo, hi });
    }
    let high = f.outlier_noise_variance.unwrap_or(DEFAULT_OUTLIER_NOISE);
    if !(high >= 0.0 && high.is_finite()) {
        return Err(Error::Config(format!("outlier_noise_variance = {high} is not a variance")));
    }
    Ok(NoiseProfile::Outliers { lo, hi, high, fraction })
}

impl ExperimentSpec {
    /// Defaults reproduce the regression setup (K = 300, N_k = 100, M = 2,
    /// L = 6, μ = 0.01, ρ = 0.001) and the classification setup
    /// (K = 100, L = 10, μ = 0.25, ρ = 1e-4, E_k = B_k = 1).
    pub fn from_file(f: &ConfigFile) -> Result<Self> {
        let family = f
            .problem
            .ok_or_else(|| Error::Config("missing key `problem`".into()))?;
        let regression = family == ProblemFamily::Regression;
        let problem = if regression {
            ProblemSpec::Regression {
                agents: f.agents.unwrap_or(300),
                samples: f.samples.unwrap_or(100),
                dim: f.dim.unwrap_or(2),
                ridge: f.ridge.unwrap_or(0.001),
                noise: noise_profile(f)?,
                feature_variance: pair(
                    f.feature_variance_min.unwrap_or(DEFAULT_FEATURE_VARIANCE.0),
                    f.feature_variance_max.unwrap_or(DEFAULT_FEATURE_VARIANCE.1),
                    "feature_variance",
                )?,
            }
        } else {
            let source = match (&f.train_path, &f.test_path) {
                (Some(train), Some(test)) => DataSource::Files {
                    train: train.clone(),
                    test: test.clone(),
                    features: f.features,
                },
                (None, None) => {
                    let d = LogisticPoolSpec::default();
                    DataSource::Synthetic(LogisticPoolSpec {
                        train: f.synthetic_train.unwrap_or(d.train),
                        test: f.synthetic_test.unwrap_or(d.test),
                        dim: f.synthetic_dim.unwrap_or(d.dim),
                        clusters: f.synthetic_clusters.unwrap_or(d.clusters),
                        scale_range: pair(
                            f.synthetic_scale_min.unwrap_or(d.scale_range.0),
                            f.synthetic_scale_max.unwrap_or(d.scale_range.1),
                            "synthetic_scale",
                        )?,
                        sharpness: f.synthetic_sharpness.unwrap_or(d.sharpness),
                    })
                }
                _ => return Err(Error::Config("set both `train_path` and `test_path` or neither".into())),
            };
            let (lo, hi) = match &source {
                DataSource::Files { .. } => (79, 688),
                DataSource::Synthetic(s) => {
                    let k = f.agents.unwrap_or(100);
                    let mean = s.train / k;
                    ((mean / 4).max(1), (mean * 2).max(1))
                }
            };
            ProblemSpec::Classification {
                agents: f.agents.unwrap_or(100),
                shard_size: pair(f.shard_min.unwrap_or(lo), f.shard_max.unwrap_or(hi), "shard")?,
                ridge: f.ridge.unwrap_or(1e-4),
                source,
            }
        };
        let (e_default, b_default) = if regression { ((1, 5), (1, 10)) } else { ((1, 1), (1, 1)) };
        let schemes = f.schemes.clone().unwrap_or_else(|| {
            if regression {
                Scheme::ALL.to_vec()
            } else {
                vec![Scheme::Uniform, Scheme::Plugin]
            }
        });
        if schemes.is_empty() {
            return Err(Error::Config("`schemes` is empty".into()));
        }
        if (1..schemes.len()).any(|i| schemes[..i].contains(&schemes[i])) {
            return Err(Error::Config("`schemes` lists a scheme twice".into()));
        }
        let repetitions = f.repetitions.unwrap_or(if regression { 100 } else { 1 });
        if repetitions == 0 {
            return Err(Error::Config("`repetitions` must be at least 1".into()));
        }
        let horizon = match f.iterations {
            Some(t) => Horizon::Fixed(t),
            None => Horizon::Auto {
                max: f.max_iterations.unwrap_or(5000),
            },
        };
        Ok(Self {
            problem,
            seed: f.seed.unwrap_or(0),
            participants: f.participants.unwrap_or(if regression { 6 } else { 10 }),
            step_size: f.step_size.unwrap_or(if regression { 0.01 } else { 0.25 }),
            epochs: pair(
                f.epochs_min.unwrap_or(e_default.0),
                f.epochs_max.unwrap_or(e_default.1),
                "epochs",
            )?,
            batches: pair(
                f.batch_min.unwrap_or(b_default.0),
                f.batch_max.unwrap_or(b_default.1),
                "batch",
            )?,
            floor: f.floor.unwrap_or(DEFAULT_FLOOR),
            horizon,
            schemes,
            replacement: f.replacement,
            repetitions,
            output: f.output.clone(),
        })
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut file = ConfigFile::load(path)?;
        overrides.apply(&mut file);
        Self::from_file(&file)
    }

    pub fn replacement_for(&self, scheme: Scheme) -> Replacement {
        self.replacement.unwrap_or_else(|| scheme.default_replacement())
    }
}
