use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hdlab::runner::{self, RunError};

#[derive(Parser)]
#[command(
    name = "hdlab",
    version,
    about = "h-dichotomy and evolution semigroup analyses"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis listed in a scenario file.
    Run {
        path: PathBuf,
        /// Overrides HDLAB_OUTPUT and the scenario's output_dir.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let Command::Run {
        path,
        output_dir,
        seed,
    } = cli.command;
    let mut scenario = match runner::load_scenario(&path) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let env = std::env::var(runner::OUTPUT_ENV).ok();
    let out = runner::resolve_output_dir(&scenario, output_dir.as_deref(), env.as_deref());
    log::info!("scenario {} -> {}", scenario.name, out.display());
    let outcome = runner::run_scenario(&scenario, &out);
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.summary).unwrap_or_default()
    );
    ExitCode::from(outcome.code as u8)
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
