use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedtrust::config::ScenarioConfig;
use fedtrust::harness::{run_scenario, verify_run};
use fedtrust::Error;

#[derive(Parser)]
#[command(name = "fedtrust", about = "Trust-weighted federated learning simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a JSON config
    Run {
        /// Path to the scenario config
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's round count
        #[arg(long)]
        rounds: Option<u64>,
        /// Directory for metrics.csv, events.jsonl, and artifacts/
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a run directory: replay events, re-hash artifacts,
    /// recompute digests
    Verify {
        /// Run directory written by `run --out`
        dir: PathBuf,
    },
    /// Print a scenario config with all defaults filled in
    DumpDefaults,
}

fn default_config() -> ScenarioConfig {
    let nodes = (0..4)
        .map(|i| fedtrust::config::NodeConfig {
            id: format!("node-{i}"),
            behavior: fedtrust::node_sim::NodeBehavior::Honest { lr: 0.05 },
            stake: 100.0,
        })
        .collect();
    ScenarioConfig {
        seed: 42,
        rounds: 10,
        task: fedtrust::config::TaskConfig {
            dimension: 4,
            samples_per_node: 50,
            noise_std: 0.0,
        },
        nodes,
        policy: Default::default(),
        trust: Default::default(),
        weights: Default::default(),
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            rounds,
            out,
        } => {
            let mut scenario = ScenarioConfig::load(&config)?;
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            if let Some(rounds) = rounds {
                scenario.rounds = rounds;
            }
            let result = run_scenario(&scenario, out.as_deref())?;
            if let Some(last) = result.outcomes.last() {
                println!(
                    "ran {} rounds, final validation loss {}",
                    result.outcomes.len(),
                    last.validation_loss
                );
            } else {
                println!("ran 0 rounds");
            }
            if let Some(out) = &out {
                println!("artifacts written to {}", out.display());
            }
            Ok(0)
        }
        Command::Verify { dir } => {
            let rounds = verify_run(&dir)?;
            println!("verified {rounds} finalized rounds");
            Ok(0)
        }
        Command::DumpDefaults => {
            println!("{}", default_config().to_json_pretty()?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e @ Error::VerifyMismatch(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
