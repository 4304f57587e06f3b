use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use bismut_cli::{golden, golden_text, list_golden, run_scenario, write_artifacts, CliError, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "bismut", version, about = "Run Bismut gradient estimation scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a bundled scenario by name.
    Run {
        /// Path to a TOML scenario, or the name of a bundled one.
        config: String,
        /// Exit with status 3 unless every check passes.
        #[arg(long)]
        check: bool,
        /// Override `mc.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory.
        #[arg(long, env = "BISMUT_OUT_DIR", default_value = "bismut-out")]
        out: PathBuf,
    },
    /// List the bundled scenarios.
    List,
    /// Print a bundled scenario.
    Show { name: String },
}

fn load(config: &str) -> Result<Scenario, CliError> {
    let path = PathBuf::from(config);
    if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Scenario::from_toml(&text).map_err(|e| match e {
            CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    } else if golden_text(config).is_some() {
        golden(config)
    } else {
        Err(CliError::Validation(format!("`{config}` is neither a file nor a bundled scenario")))
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::List => {
            for id in list_golden() {
                let sc = golden(id)?;
                println!("{id:20} {}", sc.description);
            }
            Ok(0)
        }
        Command::Show { name } => match golden_text(&name) {
            Some(text) => {
                print!("{text}");
                Ok(0)
            }
            None => Err(CliError::Validation(format!("no bundled scenario `{name}`"))),
        },
        Command::Run { config, check, seed, threads, out } => {
            let scenario = load(&config)?;
            let start = Instant::now();
            let outcome = run_scenario(&scenario, RunOptions { seed, threads })?;
            write_artifacts(&outcome, &out)?;
            eprintln!("{}: finished in {:.1}s, artifacts in {}", scenario.id, start.elapsed().as_secs_f64(), out.display());
            for c in &outcome.report.checks {
                println!("{} {:32} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if check && !outcome.report.passed() {
                return Ok(bismut_cli::EXIT_CHECK_FAILED);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
