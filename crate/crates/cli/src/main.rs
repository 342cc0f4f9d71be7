use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use physec_core::harness::{
    self, render_csv, write_atomic, ExperimentConfig, HarnessError, OverheadConfig, RunOptions, Scenario,
    SweepConfig,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "physec-lab", version, about = "Physical-layer security experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's `output_path`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent trials.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Tabulate the message overhead of zero-padding plus a truncated MAC.
    SweepMoh {
        /// MAC tag length in bits.
        #[arg(long, default_value_t = 64)]
        l: usize,
        #[arg(long, default_value_t = 64)]
        n_min: usize,
        #[arg(long, default_value_t = 2000)]
        n_max: usize,
        #[arg(long, default_value_t = 8)]
        step: usize,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    harness::validate_config(&raw).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            out,
            trials,
            seed,
            parallel,
        } => {
            let mut cfg = load(&config)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if parallel == 0 {
                return Err(Failure::Config("--parallel must be at least 1".into()));
            }
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let out_dir = out
                .or_else(|| cfg.output_path.clone())
                .ok_or_else(|| Failure::Config("no output directory: pass --out or set output_path".into()))?;
            let result = harness::run(&cfg, RunOptions { parallel })?;
            for path in harness::write_outputs(&cfg, &result, &out_dir)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::SweepMoh {
            l,
            n_min,
            n_max,
            step,
            out,
        } => {
            let cfg = ExperimentConfig {
                scenario: Scenario::OverheadSweep,
                channel: None,
                skg: None,
                auth: None,
                attacker: None,
                overhead: Some(OverheadConfig {
                    l_bits: l,
                    n_min,
                    n_max,
                    step,
                }),
                protocol: None,
                sweep: SweepConfig::default(),
                trials: 1,
                seed: 0,
                output_path: None,
            };
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let result = harness::run(&cfg, RunOptions::default())?;
            let csv = render_csv(&harness::metadata_line(&cfg), &result.tables[0]);
            match out {
                Some(path) => write_atomic(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("ok: scenario {} with {} trials", cfg.scenario.as_str(), cfg.trials);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
