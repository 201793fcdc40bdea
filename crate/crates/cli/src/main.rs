mod args;
mod commands;
mod workspace;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use workspace::{UsageError, Workspace};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let ws = Workspace::new(&cli.workspace);
    let result = match &cli.command {
        Command::Generate(a) => commands::generate::run(&ws, a),
        Command::Train(a) => commands::train::run(&ws, a),
        Command::Eval(a) => commands::eval::run(&ws, a),
        Command::Predict(a) => commands::predict::run(&ws, a),
        Command::Demo(a) => commands::demo::run(&ws, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 usage, 3 I/O, 4 missing dependency, 5 numeric abort.
fn exit_code(err: &anyhow::Error) -> u8 {
    use handcast::Error;
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 2,
                Error::Io(_) | Error::Json(_) | Error::Format(_) => 3,
                Error::MissingDependency(_) => 4,
                _ => 5,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    5
}
