//! `qaoi` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 I/O failure.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qaoi::experiment::{self, ExperimentSpec, ReplayOverrides};
use qaoi::metrics::MetricsAccumulator;
use qaoi::sim::{self, SimConfig};
use qaoi::{table, Error, ErrorKind, Mdp, ModelParams, Objective, SolverConfig};

#[derive(Debug, Parser)]
#[command(
    name = "qaoi",
    version,
    about = "Query-aware AoI scheduling: solve, simulate, sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one scenario by policy iteration and write the policy table.
    Solve(SolveArgs),
    /// Replay a stored policy and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Run a full parameter sweep described by a TOML config.
    Experiment(ExperimentArgs),
    /// Short PQ and QAPA trajectories for a 7-slot query period with one token
    /// per three slots on average.
    #[command(name = "demo-fig1")]
    DemoFig1(DemoArgs),
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Query period in slots.
    #[arg(long)]
    tq: usize,
    /// Packet erasure probability.
    #[arg(long)]
    epsilon: f64,
    /// Token generation probability per slot.
    #[arg(long = "mu-b")]
    mu_b: f64,
    /// Age truncation (default 100 * tq).
    #[arg(long = "delta-max")]
    delta_max: Option<usize>,
    /// Token bucket size.
    #[arg(long, default_value_t = ModelParams::DEFAULT_BUCKET_CAPACITY)]
    bucket: usize,
    /// Discount factor.
    #[arg(long, default_value_t = ModelParams::DEFAULT_DISCOUNT)]
    discount: f64,
}

impl ScenarioArgs {
    fn params(&self) -> ModelParams {
        let mut p = ModelParams::new(self.tq, self.epsilon, self.mu_b)
            .with_bucket_capacity(self.bucket)
            .with_discount(self.discount);
        if let Some(d) = self.delta_max {
            p.max_age = d;
        }
        p
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// pq or qapa.
    #[arg(long)]
    objective: Objective,
    /// Sup-norm tolerance of policy evaluation.
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Output policy file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Policy file written by `solve` or `experiment`.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    horizon: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Slots excluded from the printed averages (default 10 * tq).
    #[arg(long)]
    warmup: Option<u64>,
    /// Must match the policy's query period when given.
    #[arg(long)]
    tq: Option<usize>,
    /// Must match the policy's age truncation when given.
    #[arg(long = "delta-max")]
    delta_max: Option<usize>,
    /// Must match the policy's bucket size when given.
    #[arg(long)]
    bucket: Option<usize>,
    /// Replay through a different channel than the one solved for.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Replay with a different token rate than the one solved for.
    #[arg(long = "mu-b")]
    mu_b: Option<f64>,
    /// Output trajectory CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// TOML experiment config.
    config: PathBuf,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 0.3)]
    epsilon: f64,
    #[arg(long, default_value_t = 70)]
    slots: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

fn solve(args: &SolveArgs) -> Result<(), Error> {
    let params = args.scenario.params();
    let mdp = Mdp::new(params)?;
    let config = SolverConfig::new(args.objective).with_tolerance(args.tolerance);
    let solution = qaoi::solver::policy_iteration(&mdp, &config)?;
    table::save_policy(
        &args.out,
        &params,
        args.objective,
        &solution.policy,
        &solution.values,
    )?;
    println!(
        "{}: {} states, {} rounds, residual {:e}, {} transmit states",
        args.out.display(),
        mdp.space().len(),
        solution.rounds,
        solution.values.residual,
        solution.policy.transmit_count()
    );
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), Error> {
    let file = table::load_policy(&args.policy)?;
    let overrides = ReplayOverrides {
        query_period: args.tq,
        max_age: args.delta_max,
        bucket_capacity: args.bucket,
        erasure_prob: args.epsilon,
        token_rate: args.mu_b,
    };
    let params = experiment::replay_params(&file, &overrides)?;
    let mdp = Mdp::new(params)?;
    let mut config = SimConfig::new(args.horizon, args.seed, params.query_period);
    if let Some(w) = args.warmup {
        config.warmup = w;
    }
    // Short dumps are allowed to be all warmup; only the averages need a window.
    let measurable = config.validate().is_ok();
    if !measurable {
        config.warmup = 0;
    }
    let records = sim::simulate(&file.policy, &mdp, &config)?;
    let out = create(&args.out)?;
    sim::write_trajectory_csv(out, &records).map_err(|source| Error::Io {
        path: args.out.clone(),
        source,
    })?;
    let mut acc = MetricsAccumulator::for_params(&params);
    for r in config.measured(&records) {
        acc.push(r)?;
    }
    match acc.finish() {
        Ok(m) if measurable => println!(
            "{}: {} slots, avg AoI {:.4}, avg QAoI {:.4}",
            args.out.display(),
            records.len(),
            m.avg_aoi(),
            m.avg_qaoi()
        ),
        _ => println!("{}: {} slots", args.out.display(), records.len()),
    }
    Ok(())
}

fn run_experiment(args: &ExperimentArgs) -> Result<(), Error> {
    let spec = ExperimentSpec::load(&args.config)?;
    let out = args
        .out
        .clone()
        .or_else(|| spec.output.clone())
        .ok_or_else(|| {
            Error::Config("no output directory: pass --out or set `output` in the config".into())
        })?;
    let outcome = experiment::run_experiment(&spec, &out)?;
    for e in &outcome.manifest.entries {
        println!(
            "tq={} mu_b={} epsilon={} {}: avg AoI {:.4} (se {:.4}), avg QAoI {:.4} (se {:.4})",
            e.tq, e.mu_b, e.epsilon, e.objective, e.avg_aoi, e.se_aoi, e.avg_qaoi, e.se_qaoi
        );
    }
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn demo(args: &DemoArgs) -> Result<(), Error> {
    let params = ModelParams::new(7, args.epsilon, 1.0 / 3.0);
    let mdp = Mdp::new(params)?;
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.clone(),
        source,
    })?;
    let config = SimConfig::new(args.slots, args.seed, params.query_period).with_warmup(0);
    for objective in Objective::ALL {
        let solution = experiment::solve(&params, objective)?;
        let path = args.out.join(format!("trajectory_fig1_{objective}.csv"));
        let out = create(&path)?;
        experiment::write_trajectory(out, &solution.policy, &mdp, &config)
            .map_err(|e| with_path(&path, e))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 1,
        ErrorKind::Solver => 2,
        ErrorKind::Io => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Simulate(a) => simulate(a),
        Command::Experiment(a) => run_experiment(a),
        Command::DemoFig1(a) => demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
