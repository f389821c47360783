use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tracing::{info, warn};
use tracing_subscriber::EnvFilter;

use pbt_core::lifecycle::{garbage_collect, start_replay};
use pbt_core::model::StudyConfig;
use pbt_core::service::{Controller, FileStore, TrialService};
use pbt_core::worker::{
    run_worker, CheckpointStore, DirCheckpointStore, RetryPolicy, ToyProblemSpec,
};
use pbt_core::TrialId;
use pbt_server::{serve, HttpClient};

#[derive(Parser)]
#[command(
    name = "pbt",
    version,
    about = "Population based training service and tools"
)]
struct Cli {
    /// Tracing filter, e.g. `info` or `pbt_core=debug`.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Directory holding the study logs.
        #[arg(long)]
        data_dir: PathBuf,
        /// When given, completions whose final checkpoint is absent here are audited.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Creates a study from a JSON config file.
    CreateStudy {
        #[arg(long, default_value = "http://127.0.0.1:7878")]
        service: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Prints the study status as JSON.
    Status {
        #[arg(long, default_value = "http://127.0.0.1:7878")]
        service: String,
        #[arg(long)]
        study: String,
    },
    /// Trains trials of a study on a toy problem until it completes.
    Worker {
        #[arg(long, default_value = "http://127.0.0.1:7878")]
        service: String,
        #[arg(long)]
        study: String,
        /// `lr_quadratic`, `shifted_optimum`, or a path to a problem JSON file.
        #[arg(long, default_value = "shifted_optimum")]
        problem: String,
        #[arg(long, default_value_t = 100)]
        eval_every: u64,
        #[arg(long, default_value = "worker-0")]
        worker_id: String,
        /// Checkpoints live under `<data-dir>/checkpoints`.
        #[arg(long)]
        data_dir: PathBuf,
        /// Give up after this many consecutive deferrals.
        #[arg(long)]
        max_idle_polls: Option<u32>,
    },
    /// Deletes checkpoints no pending or future trial can need.
    Gc {
        #[arg(long, default_value = "http://127.0.0.1:7878")]
        service: String,
        #[arg(long)]
        study: String,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        keep_final: bool,
        #[arg(long)]
        dry_run: bool,
        /// Repeat every this many seconds instead of running once.
        #[arg(long, num_args = 0..=1, default_missing_value = "60")]
        every: Option<u64>,
    },
    /// Creates a study that retrains the lineage of the given trials.
    Replay {
        #[arg(long, default_value = "http://127.0.0.1:7878")]
        service: String,
        #[arg(long)]
        study: String,
        /// Comma separated trial ids.
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<TrialId>,
        #[arg(long)]
        out_study: String,
    },
    /// Stops trials whose workers are gone so their slots are refilled.
    Recover {
        #[arg(long, default_value = "http://127.0.0.1:7878")]
        service: String,
        #[arg(long)]
        study: String,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_new(&cli.log_level).context("bad --log-level")?)
        .with_writer(std::io::stderr)
        .init();
    match cli.command {
        Command::Serve {
            listen,
            data_dir,
            checkpoint_dir,
        } => run_server(&listen, &data_dir, checkpoint_dir),
        Command::CreateStudy { service, config } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let config: StudyConfig =
                serde_json::from_str(&text).context("parsing study config")?;
            let created = HttpClient::new(service)?.create_study(&config)?;
            print_json(&created)
        }
        Command::Status { service, study } => {
            print_json(&HttpClient::new(service)?.get_study(&study)?)
        }
        Command::Worker {
            service,
            study,
            problem,
            eval_every,
            worker_id,
            data_dir,
            max_idle_polls,
        } => {
            let problem = load_problem(&problem, eval_every)?;
            let client = HttpClient::new(service)?;
            let store = DirCheckpointStore::open(data_dir.join("checkpoints"))?;
            let summary = run_worker(
                &client,
                &store,
                &study,
                &problem,
                &worker_id,
                RetryPolicy::default(),
                max_idle_polls,
            )?;
            info!(
                completed = summary.completed,
                failed = summary.failed,
                abandoned = summary.abandoned,
                "worker done"
            );
            Ok(())
        }
        Command::Gc {
            service,
            study,
            data_dir,
            keep_final,
            dry_run,
            every,
        } => {
            let client = HttpClient::new(service)?;
            let store = DirCheckpointStore::open(data_dir.join("checkpoints"))?;
            loop {
                let status = client.get_study(&study)?;
                let trials = client.list_trials(&study)?;
                let report = garbage_collect(&status.config, &trials, &store, keep_final, dry_run);
                print_json(&report)?;
                match every {
                    Some(secs) if !status.study_complete => {
                        std::thread::sleep(Duration::from_secs(secs))
                    }
                    _ => return Ok(()),
                }
            }
        }
        Command::Replay {
            service,
            study,
            targets,
            out_study,
        } => {
            let client = HttpClient::new(service)?;
            let config = start_replay(&client, &study, &targets, &out_study)?;
            print_json(&config)
        }
        Command::Recover { service, study } => {
            print_json(&HttpClient::new(service)?.recover_study(&study)?)
        }
    }
}

fn run_server(listen: &str, data_dir: &Path, checkpoint_dir: Option<PathBuf>) -> Result<()> {
    let store = Arc::new(FileStore::open(data_dir)?);
    let mut controller = Controller::new(store);
    if let Some(dir) = checkpoint_dir {
        let checkpoints = DirCheckpointStore::open(dir)?;
        controller =
            controller.with_checkpoint_check(Arc::new(move |path| checkpoints.exists(path)));
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        info!(addr = %listener.local_addr()?, "listening");
        serve(listener, Arc::new(controller), async {
            if tokio::signal::ctrl_c().await.is_err() {
                warn!("no signal handler; running until killed");
                std::future::pending::<()>().await;
            }
        })
        .await?;
        Ok(())
    })
}

fn load_problem(name: &str, eval_every: u64) -> Result<ToyProblemSpec> {
    Ok(match name {
        "shifted_optimum" => ToyProblemSpec::shifted_optimum(eval_every),
        "lr_quadratic" => ToyProblemSpec::lr_quadratic(4, eval_every),
        path => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("reading problem {path}"))?;
            let problem: ToyProblemSpec = serde_json::from_str(&text).context("parsing problem")?;
            if problem.eval_every == 0 {
                bail!("problem eval_every must be positive");
            }
            problem
        }
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}
