//! `darboux`: command-line front end of the workbench.
//!
//! Exit status: 0 when every check passes, 1 when a check fails, 2 on
//! configuration, domain or I/O errors.

mod commands;
mod config;
mod report;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Command, Resolved};
use report::Document;

fn finish<D: Document>(doc: anyhow::Result<D>, cfg: &Resolved) -> anyhow::Result<bool> {
    let doc = doc?;
    report::emit(&doc, cfg.format, cfg.out.as_deref(), cfg.csv.as_deref())?;
    Ok(doc.passed())
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    let cfg = config::resolve(&cli.options)?;
    let run = &cfg.run;
    match cli.command {
        Command::Point => finish(commands::point(run), &cfg),
        Command::Verify => finish(commands::verify(run), &cfg),
        Command::Brackets => finish(commands::brackets(run), &cfg),
        Command::Pullback => finish(commands::pullback(run), &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
