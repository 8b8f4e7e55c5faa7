mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use serde_json::Value;

use args::{Cli, Command, Common};
use sca::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sca::Error),
    #[error("config file {0}")]
    Toml(String),
    #[error("disconnected graph: {0}")]
    Disconnected(String),
    #[error("writing outputs: {0}")]
    Write(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Io => 1,
                ErrorKind::Parse => 2,
                ErrorKind::Parameter => 3,
                ErrorKind::Numeric => 4,
            },
            CliError::Write(_) => 1,
            CliError::Toml(_) => 2,
            CliError::Disconnected(_) => 5,
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Generate(a) => &a.common,
        Command::Embed(a) => &a.common,
        Command::Extend(a) => &a.common,
        Command::Distance(a) => &a.common,
        Command::SelectBandwidth(a) => &a.common,
        Command::Nodal(a) => &a.common,
        Command::SpiralExperiment(a) => &a.common,
        Command::CoarseGrain(a) => &a.common,
        Command::Oracle(a) => &a.common,
        Command::ConvergenceStudy(a) => &a.common,
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let run = match &cli.command {
        Command::Generate(a) => commands::generate_cmd(a),
        Command::Embed(a) => commands::embed_cmd(a),
        Command::Extend(a) => commands::extend_cmd(a),
        Command::Distance(a) => commands::distance_cmd(a),
        Command::SelectBandwidth(a) => commands::select_cmd(a),
        Command::Nodal(a) => commands::nodal_cmd(a),
        Command::SpiralExperiment(a) => commands::spiral_cmd(a),
        Command::CoarseGrain(a) => commands::coarse_cmd(a),
        Command::Oracle(a) => commands::oracle_cmd(a),
        Command::ConvergenceStudy(a) => commands::convergence_cmd(a),
    }?;
    let common = common(&cli.command);
    if common.fail_on_disconnected && !run.disconnected.is_empty() {
        return Err(CliError::Disconnected(run.disconnected.join("; ")));
    }
    let config = serde_json::to_value(&cli.command).expect("config serializes");
    let (name, config) = match config {
        Value::Object(m) if m.len() == 1 => m.into_iter().next().expect("one entry"),
        other => ("unknown".to_string(), other),
    };
    for w in &run.artifacts.warnings {
        eprintln!("warning: {w}");
    }
    run.artifacts.commit(&common.out, &name, config, common.seed)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
