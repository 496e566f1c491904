//! Command-line definitions and the config-file override layer.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "ndmeas",
    about = "Simulate and analyze repeated indirect quantum measurements",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a model file and run all structural checks.
    Validate(RunArgs),
    /// Sample measurement trajectories and write them as delimited text.
    Simulate(RunArgs),
    /// Exact or Monte-Carlo error probability of the window estimator.
    Estimate(RunArgs),
    /// Closeness constants, concentration certificates and error bounds.
    Bounds(RunArgs),
    /// Purification diagnostics: coherence decay, resolved facts, Born rule.
    Purify(RunArgs),
    /// Measurement-cycle runs: jump trajectories, closeness, Markov limit.
    Jumps(RunArgs),
    /// Masses of windowed histories of facts.
    Histories(RunArgs),
    /// Re-run a subcommand over a grid of one parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Mc,
}

/// Flags shared by every subcommand. A JSON config file given with
/// `--config` overrides any flag that it sets.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Model document (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// JSON config file; its fields override the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RNG seed (mandatory; no wall-clock default).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Prefix length (estimate, bounds) or trajectory length (simulate,
    /// purify).
    #[arg(long)]
    pub k: Option<usize>,
    /// Estimation window length.
    #[arg(long)]
    pub r: Option<usize>,
    /// Number of windows for histories.
    #[arg(long)]
    pub p: Option<usize>,
    /// Trajectory / sample budget.
    #[arg(long = "n-traj")]
    pub n_traj: Option<usize>,
    /// Number of measurement cycles.
    #[arg(long = "n-cycles")]
    pub n_cycles: Option<usize>,
    /// Closeness epsilon (jumps) or window width ε_r (histories).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// exact | mc
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// State-dump stride (simulate, purify).
    #[arg(long)]
    pub stride: Option<usize>,
    /// Grid of h values for the fluctuation diagnostic (purify).
    #[arg(long = "h-grid", value_delimiter = ',')]
    pub h_grid: Option<Vec<f64>>,
    /// Enforce strictly positive p(ξ|ν) when loading the model.
    #[arg(long, default_value_t = false)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Subcommand to sweep: estimate | jumps | histories | bounds.
    #[arg(long)]
    pub command: String,
    /// Swept parameter and values, e.g. `r:4,8,12`.
    #[arg(long)]
    pub sweep: String,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Optional config-file payload; any present field overrides the flag.
#[derive(Debug, Default, Deserialize)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub r: Option<usize>,
    pub p: Option<usize>,
    pub n_traj: Option<usize>,
    pub n_cycles: Option<usize>,
    pub epsilon: Option<f64>,
    pub method: Option<Method>,
    pub stride: Option<usize>,
    pub h_grid: Option<Vec<f64>>,
    pub strict: Option<bool>,
}

/// Fully resolved run configuration (flags merged with the config file);
/// this is what the manifest records.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub model: PathBuf,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub k: usize,
    pub r: usize,
    pub p: usize,
    pub n_traj: usize,
    pub n_cycles: usize,
    pub epsilon: f64,
    /// Whether epsilon was set explicitly (flag or config) rather than
    /// defaulted; histories picks `r^{-1/3}` when it wasn't.
    pub epsilon_set: bool,
    pub method: Method,
    pub stride: Option<usize>,
    pub h_grid: Option<Vec<f64>>,
    pub strict: bool,
}

impl RunArgs {
    /// Merge with the config file (config wins) and apply defaults. Fails
    /// with a usage error when no seed is given anywhere.
    pub fn resolve(&self) -> Result<ResolvedConfig, crate::CliError> {
        let file: ConfigFile = match &self.config {
            None => ConfigFile::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(crate::CliError::Io)?;
                serde_json::from_str(&text)
                    .map_err(|e| crate::CliError::Check(format!("bad config file: {e}")))?
            }
        };
        let seed = file
            .seed
            .or(self.seed)
            .ok_or_else(|| crate::CliError::Usage("--seed is mandatory (or set it in --config)".into()))?;
        Ok(ResolvedConfig {
            model: self.model.clone(),
            seed,
            out: file.out.or_else(|| self.out.clone()),
            k: file.k.or(self.k).unwrap_or(200),
            r: file.r.or(self.r).unwrap_or(8),
            p: file.p.or(self.p).unwrap_or(4),
            n_traj: file.n_traj.or(self.n_traj).unwrap_or(1000),
            n_cycles: file.n_cycles.or(self.n_cycles).unwrap_or(200),
            epsilon: file.epsilon.or(self.epsilon).unwrap_or(0.05),
            epsilon_set: file.epsilon.or(self.epsilon).is_some(),
            method: file.method.or(self.method).unwrap_or(Method::Exact),
            stride: file.stride.or(self.stride),
            h_grid: file.h_grid.or_else(|| self.h_grid.clone()),
            strict: file.strict.unwrap_or(self.strict),
        })
    }
}
