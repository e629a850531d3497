mod commands;
mod schedules;
mod select;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Round-based and asynchronous message-passing models: runs, simulations and checks.
#[derive(Parser, Debug)]
#[command(name = "hoamp", version)]
pub struct Cli {
    /// Master seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for exploration.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Overrides the default cap on enumerated graphs and explored branches.
    #[arg(long, global = true, env = "HOAMP_CAP")]
    pub cap: Option<u128>,

    /// Writes the JSON report here instead of stdout.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Runs one engine or simulation and checks the result.
    Simulate(SimulateArgs),
    /// Silenced processes and reach sets of a round schedule.
    AnalyzeSilence(SilenceArgs),
    /// Exhaustive exploration of every schedule up to a depth.
    Explore(ExploreArgs),
    /// Looks for two names that one process cannot tell apart on the separation schedule.
    Separate(SeparateArgs),
    /// The randomized separation experiment.
    RandSeparate(RandSeparateArgs),
    /// Runs the silence lemma suites over enumerated or sampled lassos.
    CheckLemmas(LemmaArgs),
    /// Communication graph enumeration.
    Graphs {
        #[command(subcommand)]
        action: GraphsAction,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SimModel {
    Ho,
    Sfho,
    Cfho,
    Amp,
    HoInAmp,
    AmpInSfho,
}

#[derive(Args, Debug)]
pub struct Size {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub f: usize,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub size: Size,
    #[arg(long, value_enum, default_value = "ho")]
    pub model: SimModel,
    #[arg(long, default_value = "min-consensus")]
    pub protocol: String,
    /// Task checked against the outputs, e.g. `consensus` or `renaming:1000:7`.
    #[arg(long)]
    pub task: Option<String>,
    /// Task value alphabet.
    #[arg(long, default_value = "0,1")]
    pub values: String,
    /// Comma separated inputs; defaults to `1..=n`.
    #[arg(long)]
    pub inputs: Option<String>,
    /// Schedule file (JSON).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Built-in schedule: complete, separation, random, all-deliver.
    #[arg(long, default_value = "complete")]
    pub generator: String,
    /// Rounds to run; simulations of asynchronous processes default past the blocking window.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Step budget for asynchronous runs.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Crash `p` from round `r`, as `p:r` (cfho only).
    #[arg(long = "crash")]
    pub crashes: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SilenceArgs {
    #[command(flatten)]
    pub size: Size,
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long, default_value = "complete")]
    pub generator: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExploreMode {
    Safety,
    Decision,
}

#[derive(Args, Debug)]
pub struct ExploreArgs {
    #[command(flatten)]
    pub size: Size,
    #[arg(long)]
    pub protocol: String,
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value = "0,1")]
    pub values: String,
    #[arg(long)]
    pub depth: usize,
    #[arg(long, value_enum, default_value = "safety")]
    pub mode: ExploreMode,
    /// Loss-free rounds appended to undecided leaves in decision mode.
    #[arg(long, default_value_t = 12)]
    pub extension: usize,
    /// Writes the first counterexample as a replayable schedule file.
    #[arg(long)]
    pub counterexample: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SeparateArgs {
    #[command(flatten)]
    pub size: Size,
    #[arg(long, default_value = "mod-n")]
    pub protocol: String,
    /// Names of `p_1..p_{n-2}` and `p_n`; defaults to `1..n`.
    #[arg(long)]
    pub fixed: Option<String>,
    /// First candidate name; `n + f + 1` consecutive candidates are tried.
    #[arg(long, default_value_t = 10)]
    pub first_candidate: u64,
    #[arg(long, default_value_t = 40)]
    pub budget: usize,
}

#[derive(Args, Debug)]
pub struct RandSeparateArgs {
    #[command(flatten)]
    pub size: Size,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 2)]
    pub budget: usize,
    /// Runs per candidate when estimating name distributions.
    #[arg(long, default_value_t = 2000)]
    pub samples: u64,
}

#[derive(Args, Debug)]
pub struct LemmaArgs {
    #[command(flatten)]
    pub size: Size,
    /// Random lassos to check when not exhaustive.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Checks every lasso whose prefix and cycle together have at most this many graphs.
    #[arg(long)]
    pub exhaustive_depth: Option<usize>,
    /// Writes the first counterexample lasso here.
    #[arg(long)]
    pub counterexample: Option<PathBuf>,
    /// Swaps in a deliberately wrong silence analysis (harness self-test).
    #[arg(long, hide = true)]
    pub mutate: bool,
}

#[derive(Subcommand, Debug)]
pub enum GraphsAction {
    Enumerate(Size),
    Count(Size),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
