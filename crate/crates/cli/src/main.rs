use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rankwise::harness::{aggregate_files, emit_report, run_experiment, ExperimentConfig, Summary};
use rankwise::session::SessionStore;
use rankwise_cli::server::router;

#[derive(Parser)]
#[command(name = "rankwise", version, about = "Active preference learning experiments and annotation service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration over its seeds and write the trajectory CSV.
    Run {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sampler: Option<String>,
        /// Comma list (`1,2,5`) or half-open range (`0..50`).
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        budget: Option<String>,
        /// Extra `key=value` overrides, applied after the file and the flags above.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average trajectory files across seeds into a summary CSV.
    Aggregate {
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the aggregate and long-format report CSVs for a summary.
    Report {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Serve the annotation HTTP API.
    Serve {
        #[arg(long, env = "RANKWISE_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Session logs live here; omit to keep sessions in memory only.
        #[arg(long, env = "RANKWISE_DATA_DIR")]
        data_dir: Option<PathBuf>,
    },
}

fn run(
    config: Option<PathBuf>,
    sampler: Option<String>,
    seeds: Option<String>,
    budget: Option<String>,
    overrides: Vec<String>,
    out: PathBuf,
) -> anyhow::Result<()> {
    let mut cfg = match &config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let flags = [("sampler", sampler), ("seeds", seeds), ("budget", budget)];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    for kv in &overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("override `{kv}` is not KEY=VALUE");
        };
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    let started = std::time::Instant::now();
    let records = run_experiment(&cfg, &out)?;
    log::info!(
        "{}: {} seeds, {} records in {:.1}s",
        cfg.algorithm(),
        cfg.seeds.len(),
        records.len(),
        started.elapsed().as_secs_f64()
    );
    println!("{}", out.display());
    Ok(())
}

async fn serve(bind: SocketAddr, data_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let store = match &data_dir {
        Some(dir) => SessionStore::open(dir).with_context(|| format!("opening {}", dir.display()))?,
        None => SessionStore::in_memory(),
    };
    let app = router(Arc::new(store));
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            sampler,
            seeds,
            budget,
            overrides,
            out,
        } => run(config, sampler, seeds, budget, overrides, out),
        Command::Aggregate { trajectories, out } => {
            let summary = aggregate_files(&trajectories)?;
            let file = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            summary.write_csv(file)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Report { summary, out_dir } => {
            let file = std::fs::File::open(&summary).with_context(|| format!("opening {}", summary.display()))?;
            let summary = Summary::read_csv(file)?;
            let (aggregate, long) = emit_report(&summary, &out_dir)?;
            println!("{}\n{}", aggregate.display(), long.display());
            Ok(())
        }
        Command::Serve { bind, data_dir } => {
            tokio::runtime::Runtime::new()?.block_on(serve(bind, data_dir))
        }
    }
}
