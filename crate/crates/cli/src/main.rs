mod args;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;
use manifest::RunManifest;

fn run_command(mut command: Command, threads: usize) -> Result<(), CliError> {
    // The resolved seed goes into the manifest so replays ignore the environment.
    let seed = command.seed_mut().map(|s| *s.get_or_insert(0));
    let start = Instant::now();
    let record = match &command {
        Command::Synth(a) => commands::synth(a, seed.unwrap_or(0))?,
        Command::Train(a) => commands::train(a, seed.unwrap_or(0))?,
        Command::Fit(a) => commands::fit(a, seed.unwrap_or(0))?,
        Command::EvalCluster(a) => commands::eval(a)?,
        Command::Interp(a) => commands::interp(a)?,
    };
    let manifest = RunManifest {
        subcommand: command.name().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        threads,
        config: record.config,
        inputs: record.inputs,
        outputs: record.outputs,
        wall_time_secs: start.elapsed().as_secs_f64(),
        command: command.clone(),
    };
    let path = manifest.write(command.out_dir())?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

fn init_threads(n: Option<usize>) -> Result<usize, CliError> {
    let n = match n {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Run(e.to_string()))?;
    Ok(n)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(path) = &cli.manifest {
        let recorded = RunManifest::read(path)?;
        let mut command = recorded.command;
        if let Some(out) = cli.replay_out {
            command.set_out_dir(out);
        }
        let threads = init_threads(cli.threads.or(Some(recorded.threads)))?;
        return run_command(command, threads);
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage(
            "a subcommand or --manifest is required (see --help)".into(),
        ));
    };
    let threads = init_threads(cli.threads)?;
    run_command(command, threads)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
