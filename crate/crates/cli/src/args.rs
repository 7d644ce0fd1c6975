use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "espo", version, about = "Three-mode constrained policy optimization on tabular CMDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded instance file (and optionally its exact optimum).
    GenerateEnv(GenerateEnvArgs),
    /// Run one algorithm on one instance and write its trace CSV.
    Run(RunArgs),
    /// Run every env × config × algorithm × seed combination in parallel.
    Grid(GridArgs),
    /// Gap, mode and efficiency tables recomputed from trace CSVs.
    Report(ReportArgs),
    /// Run the built-in invariant checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvKind {
    Random,
    Gridworld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Espo,
    Pcrpo,
    Crpo,
}

impl AlgoArg {
    pub fn name(self) -> &'static str {
        match self {
            AlgoArg::Espo => "espo",
            AlgoArg::Pcrpo => "pcrpo",
            AlgoArg::Crpo => "crpo",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateEnvArgs {
    #[arg(long, value_enum, default_value = "random")]
    pub kind: EnvKind,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also solve the instance exactly and write the optimum here.
    #[arg(long)]
    pub oracle_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    pub discount: f64,

    #[arg(long, default_value_t = 10)]
    pub states: usize,
    #[arg(long, default_value_t = 5)]
    pub actions: usize,
    #[arg(long, default_value_t = 3)]
    pub branching: usize,
    #[arg(long, default_value_t = 0.5)]
    pub budget_quantile: f64,

    #[arg(long, default_value_t = 4)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub height: usize,
    /// Hazard cell `x,y`; repeatable. Without any, the anti-diagonal cells
    /// cells are hazards.
    #[arg(long = "hazard", value_parser = parse_cell)]
    pub hazards: Vec<(usize, usize)>,
    /// Goal cell `x,y`; defaults to the far corner.
    #[arg(long, value_parser = parse_cell)]
    pub goal: Option<(usize, usize)>,
    #[arg(long, default_value_t = 1.0)]
    pub budget: f64,
    #[arg(long, default_value_t = 0.1)]
    pub slip: f64,
}

fn parse_cell(text: &str) -> Result<(usize, usize), String> {
    let (x, y) = text
        .split_once(',')
        .ok_or_else(|| format!("expected `x,y`, got `{text}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(x)?, parse(y)?))
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub algo: AlgoArg,
    #[arg(long)]
    pub env: PathBuf,
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides any `seed` key in the configuration.
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub envs: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub configs: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, num_args = 1.., default_values = ["espo"])]
    pub algos: Vec<AlgoArg>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub traces: Vec<PathBuf>,
    /// Optimum written by `generate-env --oracle-out`.
    #[arg(long)]
    pub oracle: PathBuf,
    /// Reward weight used to form the weighted output distribution.
    #[arg(long, default_value_t = 0.5)]
    pub x_r: f64,
    /// Gap tolerance for the first-hit column; defaults to 0.1·v_max/(1-γ).
    #[arg(long)]
    pub eps_gap: Option<f64>,
    /// Violation tolerance for the first-hit column; defaults to 0.05·v_max/(1-γ).
    #[arg(long)]
    pub eps_violation: Option<f64>,
    /// CRPO trace used as the reward-count comparison.
    #[arg(long)]
    pub crpo: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Also write one SVG chart per trace.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub seed: u64,
    /// Random instances per check.
    #[arg(long, default_value_t = 5)]
    pub instances: usize,
}
