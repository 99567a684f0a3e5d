//! The `shellwalk` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 verification
//! failure, 3 I/O error. `SHELLWALK_SEED` supplies the master seed when
//! `--seed` is absent. Every command writes under `--out DIR` together with a
//! `manifest.json` naming each produced file.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub use commands::{analyze, experiment, gen, sample, verify};

#[derive(Debug, Parser)]
#[command(name = "shellwalk", version, about = "Fixed-distance MCMC with intracluster moves")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a model file.
    Gen(GenArgs),
    /// Run chains on a model and write their traces.
    Sample(SampleArgs),
    /// Compute ACFs, integrated times and plots from trace files.
    Analyze(AnalyzeArgs),
    /// Run the oracle suites; exits with 2 on failure.
    Verify(VerifyArgs),
    /// Run a benchmark preset against Metropolis at equal compute.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Grid2d,
    Cube3d,
    Rbm,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub kind: ModelKind,
    /// Grid or cube side.
    #[arg(long, default_value_t = 16)]
    pub side: usize,
    /// Wrap around the boundaries.
    #[arg(long)]
    pub periodic: bool,
    /// Uniform coupling for grids.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub coupling: f64,
    /// Uniform field for grids.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub field: f64,
    #[arg(long, default_value_t = 784)]
    pub visible: usize,
    #[arg(long, default_value_t = 500)]
    pub hidden: usize,
    /// Hidden-by-visible weight matrix as CSV (one row per hidden unit).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Seed for random couplings; defaults to SHELLWALK_SEED or 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplerKind {
    Im,
    Metropolis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    UpDown,
    DownUp,
    Symmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Auto,
    Tree,
    Scan,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SamplerKind::Im)]
    pub sampler: SamplerKind,
    #[arg(long)]
    pub beta: f64,
    /// Walk bias; defaults to beta.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Fixed walk length (shorthand for --k-min K --k-max K).
    #[arg(long, conflicts_with_all = ["k_min", "k_max"])]
    pub k: Option<usize>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long, value_enum, default_value_t = OrderArg::UpDown)]
    pub order: OrderArg,
    /// Hamming distance from the reference.
    #[arg(long, conflicts_with = "fraction")]
    pub n: Option<usize>,
    /// Distance as a fraction of the variable count (floored).
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Reference state file of 0/1 characters; defaults to all zeros.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub moves: u64,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record every this many moves.
    #[arg(long, default_value_t = 1)]
    pub stride: u64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace files, or directories searched for `*.csv` traces.
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// Fraction of each trace discarded before analysis.
    #[arg(long, default_value_t = 0.1)]
    pub burn_in: f64,
    /// Largest lag in recorded entries after fairness thinning.
    #[arg(long)]
    pub max_lag: Option<usize>,
    /// Metropolis moves per intracluster move; overrides the recorded costs.
    #[arg(long)]
    pub fair_ratio: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    All,
    Kernel,
    Sampling,
    Pathwise,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    pub suite: SuiteArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recorded states per sampler in the sampling suite.
    #[arg(long, default_value_t = 200_000)]
    pub states: u64,
    /// Moves between recorded states in the sampling suite.
    #[arg(long, default_value_t = 5)]
    pub stride: u64,
    /// Sampled moves in the pathwise suite.
    #[arg(long, default_value_t = 10_000)]
    pub moves: usize,
    /// Deliberately perturb acceptance ratios; the run must then fail.
    #[arg(long)]
    pub inject_corruption: bool,
    /// Directory for report.json; the report is printed either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Ferro2d,
    Glass3d,
    Rbm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FairnessArg {
    Work,
    Wall,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub preset: PresetArg,
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    pub scale: ScaleArg,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Calibration measure when no ratio is fixed (default: the fixed reference
    /// ratio at paper scale, work counts at desk scale).
    #[arg(long, value_enum, conflicts_with = "fair_ratio")]
    pub fairness: Option<FairnessArg>,
    /// Metropolis moves per intracluster move.
    #[arg(long)]
    pub fair_ratio: Option<f64>,
    /// Intracluster moves per trial (overrides the preset).
    #[arg(long)]
    pub moves: Option<u64>,
    /// Distance from the reference (overrides the preset).
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed of the generated couplings.
    #[arg(long, default_value_t = 1)]
    pub model_seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub burn_in: f64,
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// `--seed`, else `SHELLWALK_SEED`, else 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("SHELLWALK_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("SHELLWALK_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Collects produced files and writes `manifest.json` into the output
/// directory.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<Value>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, contents: &str, params: Value) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(json!({ "path": rel, "parameters": params }));
        Ok(())
    }

    pub fn finish(self, command: &str, params: Value) -> Result<()> {
        let manifest = json!({ "command": command, "parameters": params, "files": self.files });
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Sample(a) => sample(&a),
        Command::Analyze(a) => analyze(&a),
        Command::Verify(a) => verify(&a),
        Command::Experiment(a) => experiment(&a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os())
}
