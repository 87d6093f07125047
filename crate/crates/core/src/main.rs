use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use dampwave::cli::{error_record, exit_code, run_command, Command};
use dampwave::config::{parse_config, ExperimentConfig};
use dampwave::Result;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Validate,
    Rays,
    Simulate,
    DecayFit,
    PacketsVerify,
    LemmaCheck,
    Observability,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Validate => Command::Validate,
            Cmd::Rays => Command::Rays,
            Cmd::Simulate => Command::Simulate,
            Cmd::DecayFit => Command::DecayFit,
            Cmd::PacketsVerify => Command::PacketsVerify,
            Cmd::LemmaCheck => Command::LemmaCheck,
            Cmd::Observability => Command::Observability,
        }
    }
}

/// Damped-wave decay laboratory.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    command: Cmd,
    /// Experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the report on stdout.
    #[arg(long)]
    quiet: bool,
}

fn load(args: &Args) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let command = Command::from(args.command);
    let config = load(&args);
    let result = match &config {
        Ok(c) => run_command(command, c, &args.out),
        Err(e) => Err(dampwave::Error::Config(match e {
            dampwave::Error::Config(list) => list.clone(),
            other => vec![other.to_string()],
        })),
    };
    let code = exit_code(&result);
    match &result {
        Ok(outcome) => {
            if !args.quiet {
                println!("{}", serde_json::to_string_pretty(&outcome.report).unwrap_or_default());
            }
        }
        Err(e) => {
            let record = error_record(command, config.as_ref().ok(), e);
            println!("{}", serde_json::to_string_pretty(&record).unwrap_or_default());
            eprintln!("error: {e}");
        }
    }
    ExitCode::from(code as u8)
}
