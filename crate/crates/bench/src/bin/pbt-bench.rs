use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use pbt_bench::{run_suite, write_csvs, Suite};

#[derive(Parser)]
#[command(name = "pbt-bench", version, about = "Toy-scale PBT experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs a suite file and writes its CSV tables.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run independent plans and seeds on separate threads.
        #[arg(long)]
        parallel: bool,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            plan,
            out,
            parallel,
        } => {
            let text = std::fs::read_to_string(&plan)
                .with_context(|| format!("reading {}", plan.display()))?;
            let suite = Suite::from_json(&text).context("parsing suite")?;
            let output = run_suite(&suite, parallel)?;
            write_csvs(&output, &out)?;
            for run in &output.comparison.runs {
                println!(
                    "{:<12} seed {:<3} resource {:>7} final {:.6}",
                    run.plan,
                    run.seed,
                    run.resource(),
                    run.final_objective().unwrap_or(f64::NAN)
                );
            }
            println!("wrote tables to {}", out.display());
            Ok(())
        }
    }
}
