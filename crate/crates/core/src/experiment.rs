//! Experiment driver: parameter grids, solve + Monte Carlo per grid point,
//! and the CSV / manifest artifacts.
//!
//! Configs are TOML with a fixed key set; unknown keys are rejected.
//!
//! ```toml
//! output = "results"          # optional, overridden on the command line
//! rng = "chacha8"             # optional, the only supported generator
//!
//! [[scenario]]
//! tq = 10
//! epsilon = [0.0, 0.1, 0.2]   # scalar or list
//! mu_b = 0.2
//! delta_max = 100             # default 100 * tq
//! bucket = 10
//! discount = 0.75
//! objective = ["pq", "qapa"]  # scalar or list, default both
//! horizon = 200000
//! replications = 20
//! seed = 1                    # replication i uses seed + i
//! warmup = 100                # default 10 * tq
//! trajectory_slots = 0        # dump the first slots of replication 0
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, ModelParams, Objective};
use crate::metrics::{self, MetricsAccumulator, MetricsReport, ReplicationStats, SummaryRow};
use crate::sim::{self, SimConfig, GENERATOR};
use crate::solver::{policy_iteration, Policy, Solution, SolverConfig};
use crate::table::{self, PolicyFile};

pub const DEFAULT_HORIZON: u64 = 200_000;
pub const DEFAULT_REPLICATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(xs) => xs.clone(),
        }
    }
}

fn default_rng() -> String {
    GENERATOR.to_string()
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_rng")]
    pub rng: String,
    #[serde(default)]
    pub scenario: Vec<Scenario>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub tq: usize,
    pub epsilon: OneOrMany<f64>,
    pub mu_b: f64,
    #[serde(default)]
    pub delta_max: Option<usize>,
    #[serde(default)]
    pub bucket: Option<usize>,
    #[serde(default)]
    pub discount: Option<f64>,
    #[serde(default)]
    pub objective: Option<OneOrMany<Objective>>,
    #[serde(default)]
    pub horizon: Option<u64>,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub warmup: Option<u64>,
    #[serde(default)]
    pub trajectory_slots: Option<u64>,
}

/// Monte Carlo settings shared by every objective at a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub horizon: u64,
    pub warmup: u64,
    pub replications: usize,
    pub seed_base: u64,
}

impl MonteCarlo {
    /// Desk-scale defaults: 20 replications of 200k slots, warmup of ten periods.
    pub fn new(query_period: usize, seed_base: u64) -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            warmup: SimConfig::WARMUP_PERIODS * query_period as u64,
            replications: DEFAULT_REPLICATIONS,
            seed_base,
        }
    }

    pub fn sim_config(&self, replication: usize) -> SimConfig {
        SimConfig {
            horizon: self.horizon,
            seed: self.seed_base.wrapping_add(replication as u64),
            warmup: self.warmup,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        self.sim_config(0).validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub params: ModelParams,
    pub objectives: Vec<Objective>,
    pub monte_carlo: MonteCarlo,
    pub trajectory_slots: u64,
}

impl GridPoint {
    /// Stable label used in file names and error messages.
    pub fn label(&self) -> String {
        point_label(&self.params)
    }
}

pub fn point_label(params: &ModelParams) -> String {
    format!(
        "tq{}_mu{}_eps{}",
        params.query_period, params.token_rate, params.erasure_prob
    )
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Expands and validates every grid point.
    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        if self.rng != GENERATOR {
            return Err(Error::Config(format!(
                "unsupported generator {:?} (only {GENERATOR:?} is available)",
                self.rng
            )));
        }
        let mut points = Vec::new();
        for (i, sc) in self.scenario.iter().enumerate() {
            let ctx = |m: String| Error::Config(format!("scenario {}: {m}", i + 1));
            let epsilons = sc.epsilon.to_vec();
            if epsilons.is_empty() {
                return Err(ctx("empty epsilon grid".into()));
            }
            let objectives = sc
                .objective
                .as_ref()
                .map_or_else(|| Objective::ALL.to_vec(), OneOrMany::to_vec);
            if objectives.is_empty() {
                return Err(ctx("no objective selected".into()));
            }
            let mut monte_carlo = MonteCarlo::new(sc.tq, sc.seed.unwrap_or(0));
            if let Some(h) = sc.horizon {
                monte_carlo.horizon = h;
            }
            if let Some(r) = sc.replications {
                monte_carlo.replications = r;
            }
            if let Some(w) = sc.warmup {
                monte_carlo.warmup = w;
            }
            monte_carlo.validate().map_err(|e| ctx(e.to_string()))?;
            let trajectory_slots = sc.trajectory_slots.unwrap_or(0);
            if trajectory_slots > monte_carlo.horizon {
                return Err(ctx(format!(
                    "trajectory_slots {trajectory_slots} exceeds horizon {}",
                    monte_carlo.horizon
                )));
            }
            for eps in epsilons {
                let mut params = ModelParams::new(sc.tq, eps, sc.mu_b);
                if let Some(d) = sc.delta_max {
                    params.max_age = d;
                }
                if let Some(b) = sc.bucket {
                    params.bucket_capacity = b;
                }
                if let Some(l) = sc.discount {
                    params.discount = l;
                }
                params
                    .space()
                    .map_err(|e| ctx(format!("epsilon={eps}: {e}")))?;
                points.push(GridPoint {
                    params,
                    objectives: objectives.clone(),
                    monte_carlo,
                    trajectory_slots,
                });
            }
        }
        if points.is_empty() {
            return Err(Error::Config("the experiment grid is empty".into()));
        }
        Ok(points)
    }
}

/// Policy iteration with the default solver settings.
pub fn solve(params: &ModelParams, objective: Objective) -> Result<Solution> {
    let mdp = Mdp::new(*params)?;
    policy_iteration(&mdp, &SolverConfig::new(objective))
}

/// Runs `replications` independent trajectories and reduces each one.
/// Reports come back in replication order regardless of scheduling.
pub fn replicate(policy: &Policy, mdp: &Mdp, mc: &MonteCarlo) -> Result<Vec<MetricsReport>> {
    mc.validate()?;
    (0..mc.replications)
        .into_par_iter()
        .map(|i| {
            let config = mc.sim_config(i);
            let mut acc = MetricsAccumulator::for_params(mdp.params());
            let mut failure = None;
            sim::run(policy, mdp, &config, |r| {
                if r.t > config.warmup && failure.is_none() {
                    failure = acc.push(r).err();
                }
            })?;
            match failure {
                Some(e) => Err(e),
                None => acc.finish(),
            }
        })
        .collect()
}

/// Solved and simulated result for one (grid point, objective).
#[derive(Debug, Clone)]
pub struct PointResult {
    pub params: ModelParams,
    pub objective: Objective,
    pub monte_carlo: MonteCarlo,
    pub solution: Solution,
    /// Pooled over all replications.
    pub report: MetricsReport,
    pub stats: ReplicationStats,
}

pub fn evaluate_point(
    params: &ModelParams,
    objective: Objective,
    mc: &MonteCarlo,
) -> Result<PointResult> {
    let mdp = Mdp::new(*params)?;
    let solution = policy_iteration(&mdp, &SolverConfig::new(objective))?;
    let reports = replicate(&solution.policy, &mdp, mc)?;
    Ok(PointResult {
        params: *params,
        objective,
        monte_carlo: *mc,
        stats: ReplicationStats::from_reports(&reports)?,
        report: metrics::merge(&reports)?,
        solution,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub label: String,
    pub tq: usize,
    pub epsilon: f64,
    pub mu_b: f64,
    pub delta_max: usize,
    pub bucket: usize,
    pub discount: f64,
    pub objective: Objective,
    pub eval_tolerance: f64,
    pub solver_rounds: usize,
    pub solver_residual: f64,
    pub transmit_states: usize,
    pub horizon: u64,
    pub warmup: u64,
    pub replications: usize,
    pub seeds: Vec<u64>,
    pub measured_slots: u64,
    pub measured_queries: u64,
    pub avg_aoi: f64,
    pub se_aoi: f64,
    pub avg_qaoi: f64,
    pub se_qaoi: f64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub generator: String,
    pub phase_age_cap: usize,
    pub phase_note: String,
    pub summary: String,
    pub ccdf_files: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub results: Vec<PointResult>,
    pub manifest: Manifest,
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn policy_file_name(params: &ModelParams, objective: Objective) -> String {
    format!("policy_{}_{objective}.csv", point_label(params))
}

fn trajectory_file_name(params: &ModelParams, objective: Objective) -> String {
    format!("trajectory_{}_{objective}.csv", point_label(params))
}

/// Writes the first `slots` slots of one trajectory to `out`.
pub fn write_trajectory<W: Write>(
    out: W,
    policy: &Policy,
    mdp: &Mdp,
    config: &SimConfig,
) -> Result<()> {
    let records = sim::simulate(policy, mdp, config)?;
    sim::write_trajectory_csv(out, &records).map_err(|e| Error::io("<trajectory output>", e))
}

fn run_point(
    point: &GridPoint,
    out_dir: &Path,
) -> Result<(Vec<PointResult>, Vec<ManifestEntry>, String)> {
    let label = point.label();
    let mut results = Vec::new();
    let mut entries = Vec::new();
    for &objective in &point.objectives {
        let result = evaluate_point(&point.params, objective, &point.monte_carlo)?;
        let mut files = Vec::new();

        let name = policy_file_name(&point.params, objective);
        table::save_policy(
            &out_dir.join(&name),
            &point.params,
            objective,
            &result.solution.policy,
            &result.solution.values,
        )?;
        files.push(name);

        let name = format!("phase_{label}_{objective}.csv");
        let (path, w) = create(out_dir, &name)?;
        metrics::write_phase_csv(w, &result.report).map_err(|e| Error::io(&path, e))?;
        files.push(name);

        if point.trajectory_slots > 0 {
            let name = trajectory_file_name(&point.params, objective);
            let (path, w) = create(out_dir, &name)?;
            let mdp = Mdp::new(point.params)?;
            let config = SimConfig {
                horizon: point.trajectory_slots,
                seed: point.monte_carlo.seed_base,
                warmup: 0,
            };
            write_trajectory(w, &result.solution.policy, &mdp, &config).map_err(|e| match e {
                Error::Io { source, .. } => Error::io(&path, source),
                other => other,
            })?;
            files.push(name);
        }

        let mc = &point.monte_carlo;
        entries.push(ManifestEntry {
            label: label.clone(),
            tq: point.params.query_period,
            epsilon: point.params.erasure_prob,
            mu_b: point.params.token_rate,
            delta_max: point.params.max_age,
            bucket: point.params.bucket_capacity,
            discount: point.params.discount,
            objective,
            eval_tolerance: SolverConfig::new(objective).eval_tolerance,
            solver_rounds: result.solution.rounds,
            solver_residual: result.solution.values.residual,
            transmit_states: result.solution.policy.transmit_count(),
            horizon: mc.horizon,
            warmup: mc.warmup,
            replications: mc.replications,
            seeds: (0..mc.replications)
                .map(|i| mc.sim_config(i).seed)
                .collect(),
            measured_slots: result.report.slots(),
            measured_queries: result.report.queries(),
            avg_aoi: result.report.avg_aoi(),
            se_aoi: result.stats.aoi.std_error,
            avg_qaoi: result.report.avg_qaoi(),
            se_qaoi: result.stats.qaoi.std_error,
            files,
        });
        results.push(result);
    }

    let pick = |o: Objective| results.iter().find(|r| r.objective == o).map(|r| &r.report);
    let ccdf = format!("ccdf_{label}.csv");
    let (path, w) = create(out_dir, &ccdf)?;
    metrics::write_ccdf_csv(w, pick(Objective::Pq), pick(Objective::Qapa))
        .map_err(|e| Error::io(&path, e))?;
    Ok((results, entries, ccdf))
}

/// Solves, simulates and writes every artifact of `spec` into `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentOutcome> {
    let grid = spec.grid()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let per_point: Vec<_> = grid
        .par_iter()
        .map(|point| {
            run_point(point, out_dir).map_err(|e| Error::AtGridPoint {
                point: point.label(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut results = Vec::new();
    let mut entries = Vec::new();
    let mut ccdf_files = Vec::new();
    for (r, e, c) in per_point {
        results.extend(r);
        entries.extend(e);
        ccdf_files.push(c);
    }

    let rows: Vec<SummaryRow> = results
        .iter()
        .map(|r| SummaryRow {
            epsilon: r.params.erasure_prob,
            tq: r.params.query_period,
            mu_b: r.params.token_rate,
            policy: r.objective,
            avg_aoi: r.report.avg_aoi(),
            avg_qaoi: r.report.avg_qaoi(),
        })
        .collect();
    let (path, w) = create(out_dir, "summary.csv")?;
    metrics::write_summary_csv(w, &rows).map_err(|e| Error::io(&path, e))?;

    let manifest = Manifest {
        generator: GENERATOR.to_string(),
        phase_age_cap: metrics::PHASE_AGE_CAP,
        phase_note: format!(
            "phase files list ages 1..={cap}; the age {cap} bin holds all ages >= {cap}",
            cap = metrics::PHASE_AGE_CAP
        ),
        summary: "summary.csv".into(),
        ccdf_files,
        entries,
    };
    let (path, mut w) = create(out_dir, "manifest.json")?;
    serde_json::to_writer_pretty(&mut w, &manifest)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(w))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;

    Ok(ExperimentOutcome { results, manifest })
}

/// Overrides accepted when replaying a stored policy.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReplayOverrides {
    pub query_period: Option<usize>,
    pub max_age: Option<usize>,
    pub bucket_capacity: Option<usize>,
    pub erasure_prob: Option<f64>,
    pub token_rate: Option<f64>,
}

/// Parameters for replaying `file`. The state-space dimensions must agree with
/// the policy; the channel and token rates may be changed.
pub fn replay_params(file: &PolicyFile, overrides: &ReplayOverrides) -> Result<ModelParams> {
    let stored = file.params;
    for (name, given, have) in [
        ("tq", overrides.query_period, stored.query_period),
        ("delta_max", overrides.max_age, stored.max_age),
        ("bucket", overrides.bucket_capacity, stored.bucket_capacity),
    ] {
        if let Some(given) = given.filter(|&g| g != have) {
            return Err(Error::DimensionMismatch(format!(
                "{name}={given} requested but the policy was solved for {name}={have}"
            )));
        }
    }
    let mut params = stored;
    if let Some(e) = overrides.erasure_prob {
        params.erasure_prob = e;
    }
    if let Some(m) = overrides.token_rate {
        params.token_rate = m;
    }
    params.validate()?;
    Ok(params)
}
