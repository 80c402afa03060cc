//! `edittraj`: batch front end for edit-trajectory datasets, rewards,
//! metrics, policy math and the Edit Flows sampler.
//!
//! Exit codes: 0 success, 1 internal error, 2 input error, 3 oracle failure.

mod commands;
mod io;
mod oracle;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edittraj_core::seq::AlphabetKind;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "edittraj", version, about = "Executable edit trajectories for sequence refinement")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct Global {
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Oracle: toy:<name>, stdio:<command> or tcp:<host:port>.
    #[arg(long, global = true, default_value = "toy:glycine")]
    pub oracle: String,
    /// Per-request oracle timeout.
    #[arg(long, global = true, default_value_t = 30_000)]
    pub oracle_timeout_ms: u64,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Append every oracle exchange to this transcript file.
    #[arg(long, global = true, conflicts_with = "replay")]
    pub record: Option<PathBuf>,
    /// Answer oracle requests from a recorded transcript.
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Alphabet {
    Protein,
    Smiles,
}

impl From<Alphabet> for AlphabetKind {
    fn from(a: Alphabet) -> Self {
        match a {
            Alphabet::Protein => AlphabetKind::Protein,
            Alphabet::Smiles => AlphabetKind::Smiles,
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Shortest edit script between two sequences.
    Align(commands::basic::AlignArgs),
    /// Execute a script on a sequence.
    Exec(commands::basic::ExecArgs),
    /// Check that a completion's script reproduces its output.
    Verify(commands::basic::VerifyArgs),
    /// Build supervised trajectories from a labelled pool.
    SftBuild(commands::data::SftBuildArgs),
    /// Random-edit augmentation kept by oracle pseudo-labels.
    Augment(commands::data::AugmentArgs),
    /// Random perturbation baseline.
    Perturb(commands::data::PerturbArgs),
    /// Score rollouts.
    Reward(commands::score::RewardArgs),
    /// Evaluation metrics.
    Eval(commands::score::EvalArgs),
    /// Group-relative policy objectives over logged log-probabilities.
    RlMath(commands::score::RlMathArgs),
    /// Budgeted Edit Flows sampling.
    Editflow(commands::flow::EditflowArgs),
    /// Serve a toy oracle over the JSON-lines protocol.
    OracleServe(commands::flow::ServeArgs),
}

/// Errors caused by bad user input rather than bugs or oracles.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_err(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use edittraj_core::{dataset, flow, metrics, oracle as o, policy, reward};
    for cause in err.chain() {
        let oracle_failure = cause.is::<o::OracleError>()
            || matches!(cause.downcast_ref::<dataset::DatasetError>(), Some(dataset::DatasetError::Oracle { .. }))
            || matches!(cause.downcast_ref::<reward::RewardError>(), Some(reward::RewardError::Oracle(_)))
            || matches!(cause.downcast_ref::<flow::FlowError>(), Some(flow::FlowError::Oracle(_)))
            || matches!(cause.downcast_ref::<metrics::MetricsError>(), Some(metrics::MetricsError::Oracle(_)));
        if oracle_failure {
            return 3;
        }
    }
    for cause in err.chain() {
        let input = cause.is::<InputError>()
            || cause.is::<std::io::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<edittraj_core::SeqError>()
            || cause.is::<edittraj_core::ScriptError>()
            || cause.is::<edittraj_core::ExecError>()
            || cause.is::<edittraj_core::AlignError>()
            || cause.is::<edittraj_core::trace::TraceError>()
            || cause.is::<dataset::DatasetError>()
            || cause.is::<policy::PolicyError>()
            || cause.is::<reward::RewardError>()
            || cause.is::<flow::FlowError>()
            || cause.is::<metrics::MetricsError>();
        if input {
            return 2;
        }
    }
    1
}

/// `a: b: c` from the error chain, skipping causes a parent message already embeds.
fn render_error(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !prev.is_empty() && prev.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
        prev = msg;
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match serde_json::to_string(&cli) {
        Ok(cfg) => eprintln!("edittraj: config {cfg}"),
        Err(e) => eprintln!("edittraj: config not serializable: {e}"),
    }
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("edittraj: error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("edittraj: error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edittraj: error: {}", render_error(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
