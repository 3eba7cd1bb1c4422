use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::regression::log_uniform;
use super::{AgentDataset, ProblemInstance, ProblemKind};
use crate::error::{Error, Result};

/// Splits a labelled pool into `agents` label-skewed shards.
///
/// The pool is ordered by label, then by a random 1-D projection of the
/// features; contiguous runs of that order become shards. Shard sizes are
/// uniform in `size_range` and then nudged one sample at a time until they
/// cover `min(pool, agents * max)` samples.
pub fn partition_non_iid<R: Rng + ?Sized>(
    pool: &AgentDataset,
    agents: usize,
    size_range: (usize, usize),
    ridge: f64,
    rng: &mut R,
) -> Result<ProblemInstance> {
    let (lo, hi) = size_range;
    if agents == 0 || lo == 0 || lo > hi {
        return Err(Error::Config(format!(
            "need at least one agent and 1 <= min <= max shard size, got {agents} agents and {lo}..{hi}"
        )));
    }
    let n = pool.len();
    if agents * lo > n {
        return Err(Error::PoolTooSmall {
            pool: n,
            agents,
            min_size: lo,
        });
    }
    let total = n.min(agents * hi);

    let mut sizes: Vec<usize> = (0..agents).map(|_| rng.random_range(lo..=hi)).collect();
    let mut sum: usize = sizes.iter().sum();
    while sum != total {
        let grow = sum < total;
        let eligible: Vec<usize> = (0..agents)
            .filter(|&a| if grow { sizes[a] < hi } else { sizes[a] > lo })
            .collect();
        let a = eligible[rng.random_range(0..eligible.len())];
        if grow {
            sizes[a] += 1;
            sum += 1;
        } else {
            sizes[a] -= 1;
            sum -= 1;
        }
    }

    let direction: Vec<f64> = (0..pool.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let projection: Vec<f64> = (0..n)
        .map(|r| pool.row(r).iter().zip(&direction).map(|(a, b)| a * b).sum())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        pool.target(a)
            .total_cmp(&pool.target(b))
            .then(projection[a].total_cmp(&projection[b]))
            .then(a.cmp(&b))
    });

    let mut owners: Vec<usize> = (0..agents).collect();
    owners.shuffle(rng);
    let mut shards = vec![Vec::new(); agents];
    let mut start = 0;
    for &owner in &owners {
        shards[owner] = order[start..start + sizes[owner]].to_vec();
        start += sizes[owner];
    }
    let datasets = shards
        .iter()
        .enumerate()
        .map(|(a, rows)| pool.select(a, rows))
        .collect();
    ProblemInstance::new(datasets, ridge, ProblemKind::Logistic, None)
}

/// Binary label entropy in bits.
pub fn label_entropy(data: &AgentDataset) -> f64 {
    let pos = data.targets().iter().filter(|&&y| y > 0.0).count() as f64 / data.len() as f64;
    [pos, 1.0 - pos]
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum()
}

/// Synthetic stand-in for a real binary classification dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticPoolSpec {
    pub train: usize,
    pub test: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Per-cluster feature scales are log-uniform in this range.
    pub scale_range: (f64, f64),
    /// Multiplies the planted margin inside the label sigmoid.
    pub sharpness: f64,
}

impl Default for LogisticPoolSpec {
    fn default() -> Self {
        Self {
            train: 6000,
            test: 4000,
            dim: 10,
            clusters: 8,
            scale_range: (0.2, 5.0),
            sharpness: 3.0,
        }
    }
}

/// Draws `(train, test)` pools from a Gaussian mixture with labels
/// `P(y = +1 | u) = sigmoid(sharpness · uᵀw* / scale)`.
pub fn generate_logistic_pool<R: Rng + ?Sized>(
    spec: &LogisticPoolSpec,
    rng: &mut R,
) -> Result<(AgentDataset, AgentDataset)> {
    let LogisticPoolSpec {
        train,
        test,
        dim,
        clusters,
        scale_range,
        sharpness,
    } = *spec;
    if train == 0 || test == 0 || dim == 0 || clusters == 0 || !(scale_range.0 > 0.0 && scale_range.0 <= scale_range.1) {
        return Err(Error::Config(format!("invalid synthetic pool {spec:?}")));
    }
    let inv_sqrt = 1.0 / (dim as f64).sqrt();
    let planted: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * inv_sqrt).collect();
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let scales: Vec<f64> = (0..clusters).map(|_| log_uniform(scale_range.0, scale_range.1, rng)).collect();

    let draw = |count: usize, rng: &mut R| {
        let mut features = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let c = rng.random_range(0..clusters);
            let start = features.len();
            for center in &centers[c] {
                let z: f64 = rng.sample(StandardNormal);
                features.push(scales[c] * (center + 0.5 * z));
            }
            let margin: f64 = features[start..].iter().zip(&planted).map(|(a, b)| a * b).sum();
            let prob = 1.0 / (1.0 + (-sharpness * margin / scales[c]).exp());
            labels.push(if rng.random::<f64>() < prob { 1.0 } else { -1.0 });
        }
        AgentDataset::from_flat(0, dim, features, labels)
    };
    let train_set = draw(train, rng);
    let test_set = draw(test, rng);
    Ok((train_set, test_set))
}
