use rand::Rng;
use rayon::prelude::*;

use super::config::{DataSource, ExperimentSpec, Horizon, ProblemSpec, PLATEAU_TOLERANCE, PLATEAU_WINDOW};
use super::metrics::{msd, plateau, testing_error, Metric, MetricTrace, ProbabilityDistance, SchemeTrace};
use crate::analysis::{curvature_constants, noise_constants, Curvature, TheoryConstants};
use crate::error::{Error, Result};
use crate::federated::{effective_plan, FederationConfig, Scheme, Simulation};
use crate::probabilities::{probabilities_at, ProbabilityPlan};
use crate::problems::{
    generate_logistic_pool, generate_regression, load_libsvm, partition_non_iid, AgentDataset, ProblemInstance,
    ProblemKind, RegressionSpec,
};
use crate::rng::{derive_seed, stream, tag};

/// A problem realization shared by every scheme and repetition of an experiment.
#[derive(Clone, Debug)]
pub struct PreparedProblem {
    pub instance: ProblemInstance,
    pub test: Option<AgentDataset>,
    pub epochs: Vec<usize>,
    pub batches: Vec<usize>,
}

impl PreparedProblem {
    pub fn metric(&self) -> Metric {
        if self.test.is_some() {
            Metric::TestError
        } else {
            Metric::Msd
        }
    }
}

/// Draws the data, then `E_k` and `B_k`, from the `(seed, PROBLEM)` stream.
pub fn prepare_problem(spec: &ExperimentSpec) -> Result<PreparedProblem> {
    let mut rng = stream(&[spec.seed, tag::PROBLEM]);
    let (instance, test) = match &spec.problem {
        ProblemSpec::Regression {
            agents,
            samples,
            dim,
            ridge,
            noise,
            feature_variance,
        } => {
            let rs = RegressionSpec::random(*agents, *samples, *dim, *ridge, *noise, *feature_variance, &mut rng);
            (generate_regression(&rs, &mut rng)?, None)
        }
        ProblemSpec::Classification {
            agents,
            shard_size,
            ridge,
            source,
        } => {
            let (pool, test) = match source {
                DataSource::Files { train, test, features } => {
                    let train = load_libsvm(train, *features)?;
                    let test = load_libsvm(test, Some(features.unwrap_or(train.dim()).max(train.dim())))?;
                    let train = if test.dim() > train.dim() { widen(&train, test.dim()) } else { train };
                    (train, test)
                }
                DataSource::Synthetic(s) => generate_logistic_pool(s, &mut rng)?,
            };
            if test.is_empty() {
                return Err(Error::EmptyTestSet);
            }
            (partition_non_iid(&pool, *agents, *shard_size, *ridge, &mut rng)?, Some(test))
        }
    };
    let k = instance.num_agents();
    let epochs: Vec<usize> = (0..k).map(|_| rng.random_range(spec.epochs.0..=spec.epochs.1)).collect();
    let batches: Vec<usize> = (0..k)
        .map(|a| rng.random_range(spec.batches.0..=spec.batches.1).min(instance.samples(a)))
        .collect();
    Ok(PreparedProblem {
        instance,
        test,
        epochs,
        batches,
    })
}

fn widen(data: &AgentDataset, dim: usize) -> AgentDataset {
    let rows = (0..data.len())
        .map(|n| {
            let mut r = data.row(n).to_vec();
            r.resize(dim, 0.0);
            r
        })
        .collect();
    AgentDataset::new(data.agent_id, rows, data.targets().to_vec()).expect("rows share one width")
}

/// Configuration of repetition `r` of `scheme`.
pub fn federation_config(
    spec: &ExperimentSpec,
    problem: &PreparedProblem,
    scheme: Scheme,
    repetition: usize,
    iterations: usize,
) -> FederationConfig {
    FederationConfig {
        participants: spec.participants,
        epochs: problem.epochs.clone(),
        batches: problem.batches.clone(),
        step_size: spec.step_size,
        iterations,
        scheme,
        replacement: spec.replacement_for(scheme),
        seed: derive_seed(&[spec.seed, tag::REPETITION, repetition as u64]),
        floor: spec.floor,
        initial: None,
        record_gradient_noise: false,
    }
}

struct Repetition {
    metric: Vec<f64>,
    distance: Option<ProbabilityDistance>,
}

fn run_repetition(
    spec: &ExperimentSpec,
    problem: &PreparedProblem,
    scheme: Scheme,
    repetition: usize,
    iterations: usize,
    optimal: Option<&ProbabilityPlan>,
) -> Result<Repetition> {
    let cfg = federation_config(spec, problem, scheme, repetition, iterations);
    let mut sim = Simulation::new(&problem.instance, cfg)?;
    let mut metric = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let rec = sim.step()?;
        metric.push(match (&problem.test, rec.msd) {
            (Some(test), _) => testing_error(&rec.iterate, test)?,
            (None, Some(m)) => m,
            (None, None) => unreachable!("regression records carry an MSD"),
        });
    }
    let distance = match (sim.adaptive_state(), optimal) {
        (Some(st), Some(po)) => {
            let current = st.plan();
            Some(ProbabilityDistance {
                agents: po.agents.distance(&current.agents),
                data: po.mean_data_distance(&current),
            })
        }
        _ => None,
    };
    Ok(Repetition { metric, distance })
}

/// Runs every repetition of one scheme for `iterations` iterations.
///
/// Repetitions run in parallel; results are reduced in repetition order.
pub fn run_scheme(spec: &ExperimentSpec, problem: &PreparedProblem, scheme: Scheme, iterations: usize) -> Result<SchemeTrace> {
    let optimal = match (scheme, problem.instance.kind()) {
        (Scheme::Adaptive, ProblemKind::Regression) => {
            let wo = problem.instance.closed_form_minimizer()?;
            Some(probabilities_at(&problem.instance, &wo, &problem.epochs, &problem.batches)?)
        }
        _ => None,
    };
    let reps = (0..spec.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(spec, problem, scheme, r, iterations, optimal.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let distance = if reps.iter().all(|r| r.distance.is_some()) && !reps.is_empty() {
        let n = reps.len() as f64;
        Some(ProbabilityDistance {
            agents: reps.iter().map(|r| r.distance.unwrap().agents).sum::<f64>() / n,
            data: reps.iter().map(|r| r.distance.unwrap().data).sum::<f64>() / n,
        })
    } else {
        None
    };
    Ok(SchemeTrace::from_repetitions(
        scheme,
        spec.replacement_for(scheme),
        reps.into_iter().map(|r| r.metric).collect(),
        distance,
    ))
}

/// Constants of every scheme, each evaluated at `w^o` with the probabilities the
/// scheme draws with there (plug-in and adaptive share the optimal ones).
pub fn scheme_constants(spec: &ExperimentSpec, problem: &PreparedProblem) -> Result<Vec<(Scheme, TheoryConstants)>> {
    if problem.instance.kind() != ProblemKind::Regression {
        return Ok(Vec::new());
    }
    let inst = &problem.instance;
    let wo = inst.closed_form_minimizer()?;
    let optimal = probabilities_at(inst, &wo, &problem.epochs, &problem.batches)?;
    let mut out = Vec::with_capacity(spec.schemes.len());
    for &scheme in &spec.schemes {
        let cfg = federation_config(spec, problem, scheme, 0, 0);
        let raw = match scheme {
            Scheme::Uniform => ProbabilityPlan::uniform(inst),
            _ => optimal.clone(),
        };
        let plan = effective_plan(&raw, &cfg)?;
        out.push((scheme, noise_constants(inst, &plan, &cfg, &wo)?));
    }
    Ok(out)
}

/// Outcome of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub trace: MetricTrace,
    pub curvature: Curvature,
    pub constants: Vec<(Scheme, TheoryConstants)>,
}

/// Runs every scheme on one problem realization.
///
/// `on_scheme` sees each finished scheme before the next one starts, so
/// callers can persist partial results.
pub fn run_experiment_with(
    spec: &ExperimentSpec,
    mut on_scheme: impl FnMut(&SchemeTrace, Metric) -> Result<()>,
) -> Result<ExperimentResult> {
    let problem = prepare_problem(spec)?;
    let metric = problem.metric();
    let mut traces: Vec<SchemeTrace> = Vec::with_capacity(spec.schemes.len());
    let horizon = match spec.horizon {
        Horizon::Fixed(t) => t,
        Horizon::Auto { max } => {
            let pilot = spec
                .schemes
                .iter()
                .copied()
                .find(|&s| s == Scheme::Uniform)
                .unwrap_or(spec.schemes[0]);
            let mut full = run_scheme(spec, &problem, pilot, max)?;
            let t = plateau(&full.mean, PLATEAU_WINDOW, PLATEAU_TOLERANCE).unwrap_or(max);
            full.mean.truncate(t);
            for r in &mut full.per_repetition {
                r.truncate(t);
            }
            traces.push(full);
            t
        }
    };
    for &scheme in &spec.schemes {
        if let Some(done) = traces.iter().find(|t| t.scheme == scheme) {
            on_scheme(done, metric)?;
            continue;
        }
        let trace = run_scheme(spec, &problem, scheme, horizon)?;
        on_scheme(&trace, metric)?;
        traces.push(trace);
    }
    traces.sort_by_key(|t| spec.schemes.iter().position(|&s| s == t.scheme));
    let curvature = curvature_constants(&problem.instance)?;
    Ok(ExperimentResult {
        trace: MetricTrace {
            metric,
            horizon,
            schemes: traces,
        },
        curvature,
        constants: scheme_constants(spec, &problem)?,
    })
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_experiment_with(spec, |_, _| Ok(()))
}

/// Sanity check on a prepared problem: `msd` of `w_0 = 0`.
pub fn initial_msd(problem: &PreparedProblem) -> Result<Option<f64>> {
    match problem.instance.kind() {
        ProblemKind::Regression => {
            let wo = problem.instance.closed_form_minimizer()?;
            Ok(Some(msd(&vec![0.0; wo.len()], &wo)?))
        }
        ProblemKind::Logistic => Ok(None),
    }
}
