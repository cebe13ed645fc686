mod args;
mod commands;
mod data;
mod error;
mod manifest;
mod settings;

use clap::Parser;

use crate::args::{Cli, Command, Invocation};
use crate::error::CliError;
use crate::settings::Settings;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // Built without reading the environment, so runs depend on flags only.
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn resolve_settings(cli: &Cli, extra: Option<&std::path::Path>) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        s.apply_file(path)?;
    }
    if let Some(path) = extra {
        s.apply_file(path)?;
    }
    s.apply_overrides(&cli.overrides)?;
    Ok(s)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let inv = match &cli.command {
        Command::Evaluate(a) => return commands::evaluate(a),
        Command::Stats(a) => return commands::stats(a),
        Command::Rerun(a) => {
            let dir = commands::rerun(a)?;
            println!("{}", dir.display());
            return Ok(());
        }
        Command::BuildVocab(a) => Invocation::BuildVocab(a.clone()),
        Command::Pretrain(a) => Invocation::Pretrain(a.clone()),
        Command::Finetune(a) => Invocation::Finetune(a.clone()),
        Command::Distill(a) => Invocation::Distill(a.clone()),
        Command::Crossval(a) => Invocation::Crossval(a.clone()),
        Command::Predict(a) => Invocation::Predict(a.clone()),
    };
    let student_config = match &inv {
        Invocation::Distill(a) => a.student_config.as_deref(),
        _ => None,
    };
    let mut settings = resolve_settings(&cli, student_config)?;
    commands::apply_flags(&inv, &mut settings);
    settings.validate()?;
    let dir = commands::run_invocation(inv, settings)?;
    println!("{}", dir.display());
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Help and version exit 0, usage errors exit 2.
        Err(e) => e.exit(),
    };
    init_logging(cli.verbose);
    if let Err(e) = run(cli) {
        eprintln!("{}", e.render());
        std::process::exit(e.exit_code());
    }
}
