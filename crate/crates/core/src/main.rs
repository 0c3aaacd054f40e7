use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eqpac::config::RunConfig;
use eqpac::harness::{self, axioms, demo, experiments, sweep, Outcome, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "eqpac", version, about = "PAC-Bayes certificates for group-equivariant predictors")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides run.out_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a two-dimensional Gaussian KL through a projection.
    KlDemo {
        /// `averaging`, `identity`, or a 2x2 matrix such as `1,0;0,1`.
        #[arg(long, default_value = "averaging")]
        projection: String,
    },
    /// Run the group, operator and risk property suites.
    AxiomsCheck {
        #[arg(long, hide = true)]
        inject_corrupt_group: bool,
    },
    /// Write train, validation, prior and representative splits.
    GenData,
    /// Train baseline and equivariant posteriors and certify both.
    Certify,
    /// Posterior test-error histograms next to each model's bound.
    Compare,
    /// Certify across a grid of sample sizes, confidences, mixings and orders.
    Sweep,
}

fn run(cli: Cli) -> eqpac::Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::KlDemo { projection } => demo::run(&cfg, &demo::DemoProjection::parse(&projection)?),
        Command::AxiomsCheck { inject_corrupt_group } => {
            axioms::run(&cfg, axioms::Hooks { corrupt_group: inject_corrupt_group })
        }
        Command::GenData => experiments::gen_data(&cfg),
        Command::Certify => experiments::certify_cmd(&cfg),
        Command::Compare => experiments::compare_cmd(&cfg),
        Command::Sweep => sweep::run(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(outcome) => {
            if outcome.code == 0 {
                println!("{}", outcome.message);
            } else {
                eprintln!("{}", outcome.message);
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
