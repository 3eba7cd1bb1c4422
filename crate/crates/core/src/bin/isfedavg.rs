use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use isfedavg::analysis::TheoryConstants;
use isfedavg::federated::Scheme;
use isfedavg::harness::config::{ConfigFile, ExperimentSpec, Overrides, ProblemSpec};
use isfedavg::harness::experiment::{prepare_problem, run_experiment_with, scheme_constants, ExperimentResult};
use isfedavg::harness::metrics::{to_db, Metric};
use isfedavg::harness::output::{write_result, write_trace};
use isfedavg::harness::verify;
use isfedavg::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "isfedavg", version, about = "Federated averaging with importance-sampled agents and data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Restrict to these schemes; repeatable.
    #[arg(long = "scheme")]
    schemes: Vec<Scheme>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "out")]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// LIBSVM training file; needs `--test`.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            schemes: self.schemes.clone(),
            seed: self.seed,
            output: self.out.clone(),
            iterations: self.iterations,
            repetitions: self.repetitions,
            train_path: self.train.clone(),
            test_path: self.test.clone(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    Mu,
    Participants,
    Ridge,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured scheme and write one CSV per scheme.
    Run(RunArgs),
    /// Run the enumeration and Monte-Carlo oracle checks.
    Verify,
    /// Repeat `run` over values of one parameter, one subdirectory per value.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Print the convergence constants of each configured scheme.
    Constants {
        #[arg(long)]
        config: PathBuf,
        /// Also print per-agent constants.
        #[arg(long)]
        per_agent: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(&args),
        Command::Verify => return verify_all(),
        Command::Sweep { run, param, values } => sweep(&run, param, &values),
        Command::Constants { config, per_agent } => constants(&config, per_agent),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}

fn load(args: &RunArgs) -> Result<ExperimentSpec, Error> {
    let mut file = ConfigFile::load(&args.config)?;
    args.overrides().apply(&mut file);
    ExperimentSpec::from_file(&file)
}

fn run(args: &RunArgs) -> Result<(), Error> {
    let spec = load(args)?;
    let dir = spec.output.clone().unwrap_or_else(|| PathBuf::from("results"));
    execute(&spec, &dir)
}

/// Writes each scheme's trace as soon as it finishes, so a later failure
/// leaves the finished schemes on disk.
fn execute(spec: &ExperimentSpec, dir: &Path) -> Result<(), Error> {
    let result = run_experiment_with(spec, |trace, metric| {
        write_trace(dir, trace, metric)?;
        eprintln!("{}: done", trace.scheme);
        Ok(())
    })?;
    write_result(dir, &result)?;
    report(&result);
    println!("wrote {}", dir.display());
    Ok(())
}

fn report(result: &ExperimentResult) {
    println!("horizon: {} iterations", result.trace.horizon);
    for t in &result.trace.schemes {
        let steady = t.steady_state().unwrap_or(f64::NAN);
        match result.trace.metric {
            Metric::Msd => print!("{:<9} steady-state MSD {:>9.3} dB", t.scheme.name(), to_db(steady)),
            Metric::TestError => print!("{:<9} final test error {:>7.3} %", t.scheme.name(), t.mean.last().copied().unwrap_or(f64::NAN)),
        }
        if let Some(d) = t.distance {
            print!("  |p_k^o - p_k| = {:.3e}  mean |p_n^o - p_n| = {:.3e}", d.agents, d.data);
        }
        println!();
    }
}

fn verify_all() -> ExitCode {
    match verify::run_all() {
        Ok(checks) => {
            let mut ok = true;
            for c in &checks {
                println!("{c}");
                ok &= c.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFY)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn sweep(args: &RunArgs, param: SweepParam, values: &[f64]) -> Result<(), Error> {
    if values.is_empty() {
        return Err(Error::Config("`--values` is empty".into()));
    }
    let base = load(args)?;
    let root = base.output.clone().unwrap_or_else(|| PathBuf::from("results"));
    for &v in values {
        let mut spec = base.clone();
        let label = match param {
            SweepParam::Mu => {
                spec.step_size = v;
                format!("mu={v}")
            }
            SweepParam::Participants => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::Config(format!("participant count {v} is not a positive integer")));
                }
                spec.participants = v as usize;
                format!("participants={v}")
            }
            SweepParam::Ridge => {
                match &mut spec.problem {
                    ProblemSpec::Regression { ridge, .. } | ProblemSpec::Classification { ridge, .. } => *ridge = v,
                }
                format!("ridge={v}")
            }
        };
        println!("== {label}");
        execute(&spec, &root.join(label))?;
    }
    Ok(())
}

fn constants(config: &Path, per_agent: bool) -> Result<(), Error> {
    let spec = ExperimentSpec::from_file(&ConfigFile::load(config)?)?;
    let problem = prepare_problem(&spec)?;
    let all = scheme_constants(&spec, &problem)?;
    if all.is_empty() {
        println!("no closed-form optimum; constants are reported for regression problems only");
    }
    for (scheme, c) in &all {
        print_constants(*scheme, c, per_agent);
    }
    Ok(())
}

fn print_constants(scheme: Scheme, c: &TheoryConstants, per_agent: bool) {
    println!("[{scheme}] replacement = {}, L = {}, mu = {}", c.replacement, c.participants, c.step_size);
    println!("  nu         = {:.6e}", c.nu);
    println!("  delta      = {:.6e}", c.delta);
    if let Some(xi) = c.xi {
        println!("  xi         = {xi:.6e}");
    }
    println!("  beta_s^2   = {:.6e}", c.beta_s_sq);
    println!("  sigma_s^2  = {:.6e}", c.sigma_s_sq);
    println!("  lambda     = {:.9}", c.rates.lambda);
    println!("  max lambda_k = {:.9}", c.rates.lambda_k.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    println!("  mu_max     = {:.6e}", c.rates.mu_max);
    println!("  admissible = {}", c.step_size < c.rates.mu_max);
    if per_agent {
        println!("  agent,p_k,E_k,alpha_k,beta_sk^2,sigma_sk^2,sigma_qk^2,|grad P_k|,lambda_k");
        for k in 0..c.agent_probs.len() {
            println!(
                "  {k},{:.6e},{},{:.6},{:.6e},{:.6e},{:.6e},{:.6e},{:.9}",
                c.agent_probs[k],
                c.epochs[k],
                c.alpha_k[k],
                c.beta_sk_sq[k],
                c.sigma_sk_sq[k],
                c.sigma_qk_sq[k],
                c.grad_norms[k],
                c.rates.lambda_k[k]
            );
        }
    }
}
