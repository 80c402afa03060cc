//! One module per command family; `run` dispatches.

pub mod basic;
pub mod data;
pub mod flow;
pub mod score;

use anyhow::Result;

use crate::{input_err, Cli, Command, Format};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Align(a) => basic::align(g, a),
        Command::Exec(a) => basic::exec(g, a),
        Command::Verify(a) => basic::verify(g, a),
        Command::SftBuild(a) => data::sft_build(g, a),
        Command::Augment(a) => data::augment(g, a),
        Command::Perturb(a) => data::perturb(g, a),
        Command::Reward(a) => score::reward(g, a),
        Command::Eval(a) => score::eval(g, a),
        Command::RlMath(a) => score::rl_math(g, a),
        Command::Editflow(a) => flow::editflow(g, a),
        Command::OracleServe(a) => flow::serve(g, a),
    }
}

/// The requested format, or `default`; anything outside `allowed` is an input error.
pub fn pick_format(requested: Option<Format>, default: Format, allowed: &[Format], command: &str) -> Result<Format> {
    let f = requested.unwrap_or(default);
    if allowed.contains(&f) {
        Ok(f)
    } else {
        Err(input_err(format!("{command} does not support --format {f:?}").to_lowercase()))
    }
}
