//! Command-line front end: one subcommand per pipeline stage, each writing
//! its outputs plus a `manifest.json` that is enough to replay it.

pub mod args;
pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;
pub mod svg;

use std::path::Path;

use clap::{CommandFactory, Parser};

use args::{AnalyzeCmd, Cli, Command, ReplayCmd};
use error::{CliError, CliResult};
use manifest::RunManifest;
use stages::{replay, run_cli_stage, Stage};

/// Run the tool on `argv` (program name first) and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match with_config(argv) {
        Ok(a) => a,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn with_config(argv: Vec<String>) -> CliResult<Vec<String>> {
    match config::config_path(&argv) {
        Some(path) => {
            let entries = config::read_config(Path::new(&path))?;
            config::inject(&Cli::command(), argv, &entries)
        }
        None => Ok(argv),
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(c) => run_cli_stage(&c).map(drop),
        Command::Ingest(c) => run_cli_stage(&c).map(drop),
        Command::Stops(c) => run_cli_stage(&c).map(drop),
        Command::Corpus(c) => run_cli_stage(&c).map(drop),
        Command::Train(c) => run_cli_stage(&c).map(drop),
        Command::Query(c) => run_cli_stage(&c).map(drop),
        Command::Analyze(AnalyzeCmd::CategorySim(c)) => run_cli_stage(&c).map(drop),
        Command::Analyze(AnalyzeCmd::Decay(c)) => run_cli_stage(&c).map(drop),
        Command::Analyze(AnalyzeCmd::Variogram(c)) => run_cli_stage(&c).map(drop),
        Command::Pipeline(c) => run_cli_stage(c.as_ref()).map(drop),
        Command::Replay(c) => run_replay(&c),
    }
}

fn run_replay(c: &ReplayCmd) -> CliResult<()> {
    let m = RunManifest::read(&c.manifest)?;
    let dir = c
        .manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let out = c.out_dir.clone().unwrap_or_else(|| dir.clone());
    let fresh = match m.subcommand.as_str() {
        args::SynthCmd::NAME => replay::<args::SynthCmd>(&m, &dir, &out)?,
        args::IngestCmd::NAME => replay::<args::IngestCmd>(&m, &dir, &out)?,
        args::StopsCmd::NAME => replay::<args::StopsCmd>(&m, &dir, &out)?,
        args::CorpusCmd::NAME => replay::<args::CorpusCmd>(&m, &dir, &out)?,
        args::TrainCmd::NAME => replay::<args::TrainCmd>(&m, &dir, &out)?,
        args::QueryCmd::NAME => replay::<args::QueryCmd>(&m, &dir, &out)?,
        args::CategorySimCmd::NAME => replay::<args::CategorySimCmd>(&m, &dir, &out)?,
        args::DecayCmd::NAME => replay::<args::DecayCmd>(&m, &dir, &out)?,
        args::VariogramCmd::NAME => replay::<args::VariogramCmd>(&m, &dir, &out)?,
        args::PipelineCmd::NAME => replay::<args::PipelineCmd>(&m, &dir, &out)?,
        other => return Err(CliError::Invalid(format!("unknown subcommand {other:?} in manifest"))),
    };
    let same = fresh.outputs == m.outputs;
    if same {
        log::info!("replay: outputs match the recorded digests");
    } else {
        log::warn!("replay: outputs differ from the recorded digests");
    }
    Ok(())
}
