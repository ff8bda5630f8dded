use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cohprod::config::{load_config, validate_config, SCENARIOS};
use cohprod::scenarios::{output_root, plot_data, run_experiment, Outcome};

#[derive(Parser)]
#[command(name = "cohprod", version, about = "Coherent-product state propagation, DFS scans and exact oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        /// Output root (overridden by COHPROD_OUTPUT_ROOT).
        #[arg(long, default_value = "runs")]
        output_root: PathBuf,
    },
    /// Check a config file and list every violation.
    Validate { config: PathBuf },
    ListScenarios,
    /// Write a tidy long-format plot_data.csv for a finished run.
    PlotData { run_dir: PathBuf },
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ABORT: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListScenarios => {
            for s in SCENARIOS {
                println!("{s}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => {
            let raw = match std::fs::read_to_string(&config) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match validate_config(&raw) {
                Ok(cfg) => {
                    println!("ok: scenario {}", cfg.scenario);
                    ExitCode::SUCCESS
                }
                Err(errs) => {
                    for e in errs {
                        eprintln!("{e}");
                    }
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
        Command::Run { config, output_root: root } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let root = output_root(&root);
            match run_experiment(&cfg, &root) {
                Ok(report) => {
                    for c in &report.checks {
                        println!("{} {}: {:.3e} (threshold {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
                    }
                    if let Some(e) = &report.error {
                        eprintln!("error: {e}");
                    }
                    match report.outcome {
                        Outcome::Pass => ExitCode::SUCCESS,
                        Outcome::Fail => ExitCode::from(EXIT_FAIL),
                        Outcome::Abort => ExitCode::from(EXIT_ABORT),
                    }
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(EXIT_ABORT)
                }
            }
        }
        Command::PlotData { run_dir } => match plot_data(&run_dir) {
            Ok(p) => {
                println!("{}", p.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(EXIT_ABORT)
            }
        },
    }
}
