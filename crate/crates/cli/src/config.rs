//! Command-line flags, the TOML config file, and their merge (flags win).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pmp_core::optimizer::{self, FilterParams, Provider, SampleSchedule};
use pmp_core::problem::{self, step_control, ControlSchedule, ProblemSpec};
use pmp_core::trajectories::DriftMode;

use crate::csvio;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "pmp", version, about = "Switching functions and control optimization for Lindblad problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deterministic rho, lambda, Phi and c-Hamiltonian for one control.
    Propagate(PropagateArgs),
    /// Trajectory estimators and the two stochastic switching-function procedures.
    Trajectories(TrajectoriesArgs),
    /// Projected, TV-filtered gradient optimization.
    Optimize(OptimizeArgs),
    /// Compare Phi with a central-difference gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset: retention, retention-x or preparation.
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Master seed, or `auto` to seed from the clock.
    #[arg(long)]
    pub seed: Option<String>,
    /// Worker threads for trajectory ensembles (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// zero, step, golden_optimal, constant:<value> or file:<path.csv>.
    #[arg(long)]
    pub control: Option<String>,
    /// expm or euler.
    #[arg(long)]
    pub drift: Option<String>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PropagateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrajectoriesArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<usize>,
    /// 1 (independent rho and lambda ensembles) or 2 (correlated pairs).
    #[arg(long)]
    pub procedure: Option<u8>,
    /// Write the first K trajectories and their jump records.
    #[arg(long)]
    pub dump: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// deterministic, stochastic1 or stochastic2.
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Sample-size segments, e.g. 100x50,100x200.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub w_tv: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub epsilon_warmup: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Largest accepted max|Phi - FD| / max|Phi|.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SeedValue {
    Number(u64),
    Text(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    problem: Option<String>,
    problem_spec: Option<ProblemSpec>,
    bins: Option<usize>,
    gamma: Option<f64>,
    seed: Option<SeedValue>,
    threads: Option<usize>,
    control: Option<String>,
    drift: Option<String>,
    out: Option<PathBuf>,
    #[serde(default)]
    trajectories: TrajectoriesSection,
    #[serde(default)]
    optimize: OptimizeSection,
    #[serde(default)]
    gradcheck: GradcheckSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoriesSection {
    n: Option<usize>,
    procedure: Option<u8>,
    dump: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeSection {
    provider: Option<String>,
    iters: Option<usize>,
    schedule: Option<String>,
    eta: Option<f64>,
    w_tv: Option<f64>,
    epsilon: Option<f64>,
    epsilon_warmup: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradcheckSection {
    delta: Option<f64>,
    tolerance: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Settings shared by every command, after merging.
#[derive(Debug, Clone, Serialize)]
pub struct Common {
    pub problem: String,
    pub spec: ProblemSpec,
    pub seed: u64,
    pub control: String,
    pub drift: DriftMode,
    #[serde(skip)]
    pub threads: Option<usize>,
    #[serde(skip)]
    pub out: PathBuf,
}

fn load_file(common: &CommonArgs) -> Result<FileConfig> {
    match &common.config {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn parse_seed(s: &str) -> Result<u64> {
    if s == "auto" {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_err(|e| CliError::Config(e.to_string()))?;
        return Ok(now.as_nanos() as u64);
    }
    s.parse().map_err(|_| CliError::Config(format!("seed must be an unsigned integer or 'auto', got '{s}'")))
}

fn resolve_common(args: &CommonArgs, file: &FileConfig, default_control: &str) -> Result<Common> {
    let (name, mut spec) = match (&args.problem, &file.problem_spec, &file.problem) {
        (Some(name), _, _) => (name.clone(), preset(name)?),
        (None, Some(spec), _) => ("inline".to_string(), spec.clone()),
        (None, None, Some(name)) => (name.clone(), preset(name)?),
        (None, None, None) => ("retention".to_string(), problem::make_retention_problem()),
    };
    if let Some(bins) = args.bins.or(file.bins) {
        spec = spec.with_bins(bins)?;
    }
    if let Some(g) = args.gamma.or(file.gamma) {
        spec = spec.with_gamma(g)?;
    }
    let seed = match (&args.seed, &file.seed) {
        (Some(s), _) => parse_seed(s)?,
        (None, Some(SeedValue::Number(n))) => *n,
        (None, Some(SeedValue::Text(s))) => parse_seed(s)?,
        (None, None) => 0,
    };
    let drift = args.drift.clone().or_else(|| file.drift.clone()).unwrap_or_else(|| "expm".into());
    let drift: DriftMode = drift.parse().map_err(|e: pmp_core::Error| CliError::Config(e.to_string()))?;
    Ok(Common {
        problem: name,
        spec,
        seed,
        control: args.control.clone().or_else(|| file.control.clone()).unwrap_or_else(|| default_control.into()),
        drift,
        threads: args.threads.or(file.threads),
        out: args.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
    })
}

fn preset(name: &str) -> Result<ProblemSpec> {
    problem::preset(name).map_err(|_| CliError::Config(format!("unknown problem preset '{name}'")))
}

/// Builds the control named by `source` on the problem grid.
pub fn resolve_control(source: &str, spec: &ProblemSpec) -> Result<ControlSchedule> {
    let u = match source {
        "zero" => ControlSchedule::zeros_for(spec),
        "step" => step_control(spec.t_f(), spec.n_bins())?,
        "golden_optimal" => optimizer::reference_control(spec)?,
        s if s.starts_with("constant:") => {
            let v: f64 = s["constant:".len()..]
                .parse()
                .map_err(|_| CliError::Config(format!("bad constant control '{s}'")))?;
            ControlSchedule::constant(v, spec.t_f(), spec.n_bins())?
        }
        s if s.starts_with("file:") => csvio::read_control(&s["file:".len()..])?,
        other => return Err(CliError::Config(format!("unknown control '{other}'"))),
    };
    spec.check_schedule(&u)?;
    Ok(u)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoriesConfig {
    pub common: Common,
    pub n: usize,
    pub procedure: u8,
    pub dump: usize,
}

impl TrajectoriesConfig {
    pub fn resolve(args: &TrajectoriesArgs) -> Result<Self> {
        let file = load_file(&args.common)?;
        let common = resolve_common(&args.common, &file, "step")?;
        let n = args.n.or(file.trajectories.n).unwrap_or(500);
        if n == 0 {
            return Err(CliError::Config("--n must be >= 1".into()));
        }
        let procedure = args.procedure.or(file.trajectories.procedure).unwrap_or(2);
        if !matches!(procedure, 1 | 2) {
            return Err(CliError::Config(format!("--procedure must be 1 or 2, got {procedure}")));
        }
        let dump = args.dump.or(file.trajectories.dump).unwrap_or(0);
        Ok(Self { common, n, procedure, dump })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeSettings {
    pub common: Common,
    pub provider: Provider,
    pub iters: usize,
    pub schedule: SampleSchedule,
    pub params: FilterParams,
}

impl OptimizeSettings {
    pub fn resolve(args: &OptimizeArgs) -> Result<Self> {
        let file = load_file(&args.common)?;
        let sec = &file.optimize;
        let common = resolve_common(&args.common, &file, "zero")?;
        let provider: Provider = args
            .provider
            .clone()
            .or_else(|| sec.provider.clone())
            .unwrap_or_else(|| "deterministic".into())
            .parse()
            .map_err(|e: pmp_core::Error| CliError::Config(e.to_string()))?;
        let schedule: SampleSchedule = args
            .schedule
            .clone()
            .or_else(|| sec.schedule.clone())
            .unwrap_or_else(|| "100x50,100x200".into())
            .parse()
            .map_err(|e: pmp_core::Error| CliError::Config(e.to_string()))?;
        let default_iters = match provider {
            Provider::Deterministic => 200,
            _ => schedule.total_iterations(),
        };
        let iters = args.iters.or(sec.iters).unwrap_or(default_iters);
        if iters == 0 {
            return Err(CliError::Config("--iters must be >= 1".into()));
        }
        let d = FilterParams::default();
        let params = FilterParams {
            eta: args.eta.or(sec.eta).unwrap_or(d.eta),
            w_tv: args.w_tv.or(sec.w_tv).unwrap_or(d.w_tv),
            epsilon: args.epsilon.or(sec.epsilon).unwrap_or(d.epsilon),
            epsilon_warmup: args.epsilon_warmup.or(sec.epsilon_warmup).unwrap_or(d.epsilon_warmup),
        };
        params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { common, provider, iters, schedule, params })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckConfig {
    pub common: Common,
    pub delta: f64,
    pub tolerance: f64,
}

impl GradcheckConfig {
    pub fn resolve(args: &GradcheckArgs) -> Result<Self> {
        let file = load_file(&args.common)?;
        let common = resolve_common(&args.common, &file, "step")?;
        let delta = args.delta.or(file.gradcheck.delta).unwrap_or(1e-5);
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(CliError::Config(format!("--delta must be > 0, got {delta}")));
        }
        let tolerance = args.tolerance.or(file.gradcheck.tolerance).unwrap_or(1e-3);
        if !(tolerance >= 0.0) {
            return Err(CliError::Config(format!("--tolerance must be >= 0, got {tolerance}")));
        }
        Ok(Self { common, delta, tolerance })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropagateConfig {
    pub common: Common,
}

impl PropagateConfig {
    pub fn resolve(args: &PropagateArgs) -> Result<Self> {
        let file = load_file(&args.common)?;
        Ok(Self { common: resolve_common(&args.common, &file, "step")? })
    }
}

impl Command {
    pub fn threads(&self) -> Result<Option<usize>> {
        let common = match self {
            Self::Propagate(a) => &a.common,
            Self::Trajectories(a) => &a.common,
            Self::Optimize(a) => &a.common,
            Self::Gradcheck(a) => &a.common,
        };
        Ok(common.threads.or(load_file(common)?.threads))
    }
}
