use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use collapse_client::{Client, ClientError};
use collapse_core::config::RunConfig;
use collapse_core::jobs::AnalysisKind;
use collapse_core::wire::{ErrorKind, JobResponse, PresetsResponse};
use collapse_service::ServiceConfig;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_GUARD: u8 = 3;

/// Lattice simulator of gravity sourced by continuously monitored matter.
#[derive(Parser)]
#[command(name = "collapse-sim", version)]
struct Cli {
    /// Base URL of a running service. Without it an in-process service is used.
    #[arg(long, global = true, env = "COLLAPSE_SIM_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run trajectories, an ensemble or the master equation.
    Run(JobArgs),
    /// Tabulate rates, the pair potential, the κ-scan or the linearity witness.
    Analyze {
        /// rate | pair-potential | kappa-scan | linearity
        kind: AnalysisKind,
        #[command(flatten)]
        job: JobArgs,
    },
    /// Print the named physical parameter sets.
    Presets {
        #[arg(long)]
        json: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Args)]
struct JobArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `integration.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print the JSON summary instead of the file list.
    #[arg(long)]
    json: bool,
}

enum Failure {
    Config(String),
    Guard(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api(body) => match body.kind {
                ErrorKind::InvalidConfig if body.message.starts_with("invalid config") => Failure::Config(body.message),
                ErrorKind::InvalidConfig => Failure::Config(format!("invalid config: {}", body.message)),
                ErrorKind::NumericalGuard => Failure::Guard(format!(
                    "numerical guard `{}` tripped at step {}: {}",
                    body.guard.as_deref().unwrap_or("unknown"),
                    body.step.map_or("?".to_string(), |s| s.to_string()),
                    body.message
                )),
                ErrorKind::Internal => Failure::Other(anyhow::anyhow!(body.message)),
            },
            other => Failure::Other(other.into()),
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("invalid config: cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml(&text).map_err(|e| Failure::Config(e.to_string()))
}

fn write_outputs(job: &JobArgs, resp: &JobResponse) -> Result<(), Failure> {
    std::fs::create_dir_all(&job.out).with_context(|| format!("creating {}", job.out.display()))?;
    for f in &resp.files {
        let path = job.out.join(&f.name);
        std::fs::write(&path, &f.contents).with_context(|| format!("writing {}", path.display()))?;
    }
    if job.json {
        let summary = resp
            .file("summary.json")
            .or_else(|| resp.file("linearity.json"))
            .unwrap_or("{}");
        print!("{summary}");
    } else {
        for f in &resp.files {
            println!("{}", job.out.join(&f.name).display());
        }
    }
    Ok(())
}

fn print_presets(p: &PresetsResponse) {
    for e in &p.presets {
        let pr = &e.preset;
        println!("{} ({:?})", pr.name, pr.kind);
        println!("  sigma = {:e} m ({:e} cm)", pr.sigma_m, pr.sigma_cm);
        if let (Some(si), Some(cgs)) = (pr.gamma_over_hbar2_si, pr.gamma_over_hbar2_cgs) {
            println!("  gamma/hbar^2 = {si:e} m^3 kg^-2 s^-1 ({cgs:e} cm^3 g^-2 s^-1)");
        }
        if let Some(k) = pr.kappa {
            println!("  kappa = {k}");
        }
        println!("  G = {:e} m^3 kg^-1 s^-2", pr.g_si);
        if let Some(r) = pr.nucleon_rate_s {
            println!("  saturated nucleon decoherence rate = {r:e} s^-1");
        }
        let l = &e.lattice;
        println!(
            "  lattice (a = sigma, m0 = nucleon): tau = {:e} s, sigma = {}, G = {:e}{}",
            l.time_unit_s,
            l.sigma,
            l.g,
            l.gamma.map_or(String::new(), |g| format!(", gamma = {g:e}"))
        );
    }
    println!("lattice units (hbar = 1, spacing a, mass unit m0):");
    for f in &p.formulas {
        println!("  {f}");
    }
}

async fn execute(cli: Cli) -> Result<(), Failure> {
    if let Command::Serve { addr } = cli.command {
        let (local, handle) = collapse_service::spawn(addr, &ServiceConfig::from_env())
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{local}");
        tokio::select! {
            r = handle => r.context("server task")?.context("server")?,
            _ = tokio::signal::ctrl_c() => {}
        }
        return Ok(());
    }
    // Parse the config before starting anything.
    let config = match &cli.command {
        Command::Run(job) | Command::Analyze { job, .. } => Some(load_config(&job.config)?),
        _ => None,
    };
    let (client, _local) = match cli.server {
        Some(url) => (Client::new(url), None),
        None => {
            let (addr, handle) = collapse_service::spawn(([127, 0, 0, 1], 0).into(), &ServiceConfig::from_env())
                .await
                .context("starting the in-process service")?;
            (Client::new(format!("http://{addr}")), Some(handle))
        }
    };
    match cli.command {
        Command::Run(job) => {
            let resp = client.run(config.as_ref().expect("parsed"), job.seed).await?;
            write_outputs(&job, &resp)
        }
        Command::Analyze { kind, job } => {
            let resp = client.analyze(kind, config.as_ref().expect("parsed"), job.seed).await?;
            write_outputs(&job, &resp)
        }
        Command::Presets { json } => {
            let p = client.presets().await?;
            if json {
                println!("{}", serde_json::to_string_pretty(&p).context("encoding presets")?);
            } else {
                print_presets(&p);
            }
            Ok(())
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    match runtime.block_on(execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Guard(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_GUARD)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
