//! `asr`: featurize, train, decode and bench from one binary.

mod bench;
mod common;
mod decode;
mod featurize;
mod flagsfile;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::CliError;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "asr",
    version,
    args_override_self = true,
    about = "End-to-end speech recognition: features, training, decoding"
)]
struct Cli {
    /// Read flags from a file, one `--flag=value` per line (`#` comments).
    /// Flags on the command line override the file.
    #[arg(long, global = true, value_name = "PATH")]
    flagsfile: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Featurize(featurize::FeaturizeArgs),
    Train(train::TrainArgs),
    Decode(decode::DecodeArgs),
    Bench(bench::BenchArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match flagsfile::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Featurize(a) => featurize::run(a),
        Command::Train(a) => train::run(a),
        Command::Decode(a) => decode::run(a),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
