//! Argument parsing, configuration loading and error reporting for the
//! `svcm` binary. Every command is a pure function of its JSON
//! configuration, input files and seed.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use tmgp_svcm::pipeline::{
    baseline_stage, bench_stage, elicit_stage, evaluate_stage, fit_stage, infer_stage, kernel_info, roc_stage, simulate_stage,
    BaselineConfig, BenchStageConfig, ElicitConfig, EvaluateConfig, FitConfig, InferConfig, KernelInfoConfig, RocConfig,
    SimulateConfig,
};
use tmgp_svcm::Error;

/// Exit status for invalid configuration, arguments or inputs.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for numerical failures during a run.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "svcm", version, about = "Feature selection in spatially varying coefficient models with TMGP priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Each can also be set through an
/// `SVCM_`-prefixed environment variable.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file; omitted keys take their defaults.
    #[arg(long, env = "SVCM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed overriding the one in the configuration.
    #[arg(long, env = "SVCM_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "SVCM_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for block- and replicate-level parallelism.
    #[arg(long, env = "SVCM_WORKERS", default_value_t = 1)]
    pub workers: usize,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export the truncated kernel eigensystem.
    KernelInfo(Common),
    /// Draw a synthetic dataset with known coefficient fields.
    Simulate(Common),
    /// Elicit uniform priors for the thresholds from a dataset.
    Elicit(Common),
    /// Run the MCMC sampler and write a chain directory.
    Fit(Common),
    /// Selection probabilities, thresholded estimates and predictions from a chain.
    Infer(Common),
    /// Voxelwise GLM fits with naive, FDR and Bonferroni thresholding.
    Baseline(Common),
    /// Score fitted replicates against their truth.
    Evaluate(Common),
    /// ROC curves and partial AUC of every method.
    Roc(Common),
    /// Run a grid of simulation cells end to end.
    Bench(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::KernelInfo(_) => "kernel-info",
            Command::Simulate(_) => "simulate",
            Command::Elicit(_) => "elicit",
            Command::Fit(_) => "fit",
            Command::Infer(_) => "infer",
            Command::Baseline(_) => "baseline",
            Command::Evaluate(_) => "evaluate",
            Command::Roc(_) => "roc",
            Command::Bench(_) => "bench",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::KernelInfo(c)
            | Command::Simulate(c)
            | Command::Elicit(c)
            | Command::Fit(c)
            | Command::Infer(c)
            | Command::Baseline(c)
            | Command::Evaluate(c)
            | Command::Roc(c)
            | Command::Bench(c) => c,
        }
    }
}

/// A failed command: exit status plus a machine-readable description.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn to_json(&self, command: &str) -> String {
        json!({ "status": "error", "command": command, "kind": self.kind, "code": self.code, "message": self.message }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Numerical(_) | Error::SingularDesign(_) | Error::ElicitationFailure(_) | Error::UndefinedMetric(_) => {
                (EXIT_NUMERICAL, "numerical")
            }
            Error::Io(_) => (EXIT_CONFIG, "input"),
            _ => (EXIT_CONFIG, "config"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn load<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C, CliError> {
    match path {
        None => Ok(C::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
        }
    }
}

fn finish<C: Serialize>(common: &Common, config: &C, run: impl FnOnce(&C) -> tmgp_svcm::Result<()>) -> Result<Outcome, CliError> {
    if common.print_config {
        let text = serde_json::to_string_pretty(config).map_err(|e| CliError::config(e.to_string()))?;
        return Ok(Outcome::Printed(text));
    }
    run(config)?;
    Ok(Outcome::Wrote(common.out.clone()))
}

/// What a successful command produced.
#[derive(Debug)]
pub enum Outcome {
    Wrote(PathBuf),
    Printed(String),
}

impl Outcome {
    pub fn to_json(&self, command: &str) -> String {
        match self {
            Outcome::Wrote(out) => json!({ "status": "ok", "command": command, "out": out }).to_string(),
            Outcome::Printed(text) => text.clone(),
        }
    }
}

/// Execute a parsed command.
pub fn run(command: &Command) -> Result<Outcome, CliError> {
    let common = command.common();
    if common.workers == 0 {
        return Err(CliError::config("--workers must be at least 1"));
    }
    let cfg = common.config.as_deref();
    let out = common.out.as_path();
    let workers = common.workers;
    match command {
        Command::KernelInfo(_) => {
            let c: KernelInfoConfig = load(cfg)?;
            finish(common, &c, |c| kernel_info(c, out).map(|_| ()))
        }
        Command::Simulate(_) => {
            let mut c: SimulateConfig = load(cfg)?;
            if let Some(s) = common.seed {
                c.seed = s;
            }
            finish(common, &c, |c| simulate_stage(c, out))
        }
        Command::Elicit(_) => {
            let c: ElicitConfig = load(cfg)?;
            finish(common, &c, |c| elicit_stage(c, out).map(|_| ()))
        }
        Command::Fit(_) => {
            let mut c: FitConfig = load(cfg)?;
            if let Some(s) = common.seed {
                c.mcmc.seed = s;
            }
            finish(common, &c, |c| fit_stage(c, workers, out))
        }
        Command::Infer(_) => {
            let c: InferConfig = load(cfg)?;
            finish(common, &c, |c| infer_stage(c, workers, out))
        }
        Command::Baseline(_) => {
            let c: BaselineConfig = load(cfg)?;
            finish(common, &c, |c| baseline_stage(c, out))
        }
        Command::Evaluate(_) => {
            let c: EvaluateConfig = load(cfg)?;
            finish(common, &c, |c| evaluate_stage(c, out).map(|_| ()))
        }
        Command::Roc(_) => {
            let mut c: RocConfig = load(cfg)?;
            if let Some(s) = common.seed {
                c.bench.seed = s;
                c.bench.mcmc.seed = s;
            }
            finish(common, &c, |c| roc_stage(c, workers, out).map(|_| ()))
        }
        Command::Bench(_) => {
            let mut c: BenchStageConfig = load(cfg)?;
            if let Some(s) = common.seed {
                c.base.seed = s;
                c.base.mcmc.seed = s;
            }
            finish(common, &c, |c| bench_stage(c, workers, out))
        }
    }
}
