use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shqpsk::scenario;
use shqpsk_cli::{
    export_presets, load_config, run_one, run_suite, summary_table, Overrides, SummaryRow,
    EXIT_CONFIG, EXIT_SCENARIO,
};

#[derive(Parser)]
#[command(name = "shqpsk", version, about = "Self-homodyne QPSK link simulator")]
struct Cli {
    /// Override the master seed of every scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Force the equalizer off.
    #[arg(long, global = true)]
    no_eq: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario from a JSON config or a preset name.
    Run {
        config: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run several scenarios and write a summary table.
    Suite {
        configs: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Bundled presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// Print the preset names.
    List,
    /// Write every preset as a JSON config into DIR.
    Export { dir: PathBuf },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        no_eq: cli.no_eq,
    };
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return code(EXIT_CONFIG);
                }
            };
            overrides.apply(&mut cfg);
            match run_one(&cfg, &out) {
                Ok(output) => {
                    print!("{}", summary_table(&[SummaryRow::from_output(&output)]));
                    println!("wrote {}", out.join(&cfg.name).display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(if e.is_config_error() { EXIT_CONFIG } else { EXIT_SCENARIO })
                }
            }
        }
        Command::Suite { configs, jobs, out } => match run_suite(&configs, jobs, &out, overrides) {
            Ok(outcome) => {
                print!("{}", summary_table(&outcome.rows));
                for f in &outcome.failures {
                    eprintln!("error: {}: {}", f.source, f.error);
                }
                code(outcome.exit_code())
            }
            Err(e) => {
                eprintln!("error: {e}");
                code(EXIT_CONFIG)
            }
        },
        Command::Presets { action } => match action {
            PresetAction::List => {
                for name in scenario::PRESET_NAMES {
                    println!("{name}");
                }
                ExitCode::SUCCESS
            }
            PresetAction::Export { dir } => match export_presets(&dir) {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(EXIT_SCENARIO)
                }
            },
        },
    }
}
