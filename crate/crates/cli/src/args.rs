use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "sequoia-lab",
    version,
    about = "Token-tree planning, optimization and simulation"
)]
pub struct Cli {
    /// JSON object whose keys fill in long flags missing from the command line
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a seeded draft/target toy model pair
    MakePair(MakePairArgs),
    /// Plan the optimal tree for an acceptance vector under a size budget
    Plan(PlanArgs),
    /// Choose tree size and depth from a measured cost model
    Optimize(OptimizeArgs),
    /// Measure the acceptance vector of a verifier on a model pair
    Estimate(EstimateArgs),
    /// Tokens per step against tree budget for several tree structures
    Scaling(ScalingArgs),
    /// Simulated speedups under a cost model, including the optimizer's choice
    Simulate(SimulateArgs),
    /// Run the exhaustive verification oracles and report pass/fail
    Selfcheck(SelfcheckArgs),
    /// Re-run a command from its manifest and compare output digests
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MakePair(_) => "make-pair",
            Command::Plan(_) => "plan",
            Command::Optimize(_) => "optimize",
            Command::Estimate(_) => "estimate",
            Command::Scaling(_) => "scaling",
            Command::Simulate(_) => "simulate",
            Command::Selfcheck(_) => "selfcheck",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct MakePairArgs {
    #[arg(long)]
    pub vocab: usize,
    /// Context length of the Markov tables
    #[arg(long)]
    pub order: usize,
    /// Mean total-variation distance between draft and target conditionals
    #[arg(long)]
    pub divergence: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    /// JSON acceptance vector: a list, or an object with a `p` field
    #[arg(long)]
    pub acceptance: PathBuf,
    #[arg(long)]
    pub budget: usize,
    /// Maximum number of tree layers (a root-only tree has one)
    #[arg(long)]
    pub depth: Option<usize>,
    /// Maximum children per node; defaults to the vector's length
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Sort the vector into nonincreasing order instead of rejecting it
    #[arg(long)]
    pub sort: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub acceptance: PathBuf,
    /// CSV of verify timings with header `n,seconds`; must include n = 1
    #[arg(long)]
    pub cost: PathBuf,
    /// Time of one draft forward pass, in the same unit as the CSV
    #[arg(long, default_value_t = 0.0)]
    pub draft_seconds: f64,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long)]
    pub nmax: usize,
    /// Maximum number of draft passes
    #[arg(long)]
    pub dmax: usize,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Also report the best depth at each of these fixed tree sizes
    #[arg(long, value_name = "LIST")]
    pub compare_fixed: Option<String>,
    #[arg(long)]
    pub sort: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    /// Model pair JSON written by `make-pair`
    #[arg(long)]
    pub pair: PathBuf,
    #[arg(long)]
    pub verifier: String,
    #[arg(long)]
    pub kmax: usize,
    /// Number of sampled prompts; all table contexts when omitted
    #[arg(long)]
    pub prompts: Option<usize>,
    /// Sampled verifications per context when exact computation is too large
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Rejection-curve CSV; defaults to the output with a `.rejection.csv` extension
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub pair: PathBuf,
    #[arg(long)]
    pub verifier: String,
    /// Tree budgets, e.g. `4,8,...,512`
    #[arg(long)]
    pub budgets: String,
    /// Acceptance vector to plan with; estimated from the pair when omitted
    #[arg(long)]
    pub acceptance: Option<PathBuf>,
    /// Ranks to estimate when no acceptance vector is given
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    /// Decoding steps per cell
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, env = "SEQUOIA_LAB_THREADS", default_value_t = 1)]
    #[serde(skip)]
    pub threads: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScalingArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: ExperimentArgs,
    /// Comma-separated structures, e.g. `sequoia,k_independent:16`
    #[arg(long, default_value = "sequoia")]
    pub structures: String,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: ExperimentArgs,
    /// CSV of verify timings; ideal hardware (t = 1) when omitted
    #[arg(long)]
    pub cost: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub draft_seconds: f64,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 12)]
    pub dmax: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SelfcheckArgs {
    #[arg(long)]
    pub seed: u64,
    /// Random instances per check
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
