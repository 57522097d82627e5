mod config;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use raptor_core::sim::{compare_coordinator, sweep_failure, sweep_flight_size, validate_trace, write_csv};
use raptor_core::{build_schedule, run_sim, FunctionMask, SimConfig};
use raptor_proxy::{Controller, ExecutorConfig, ProxyConfig};
use serde_json::json;

use crate::config::{load_manifest, parse_listen, ConfigFile};

#[derive(Debug, Parser)]
#[command(name = "raptor", version, about = "Flight scheduling for serverless DAG jobs")]
struct Cli {
    /// TOML config file; flags and RAPTOR_* variables take precedence.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `raptor_proxy=debug`.
    #[arg(long, global = true, default_value = "warn", env = "RAPTOR_LOG")]
    log_level: String,
    /// Overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve /init and /run until interrupted.
    Serve(ServeArgs),
    /// Check a manifest and print its shape.
    Validate {
        manifest: PathBuf,
    },
    /// Print the list schedule of one flight member.
    Schedule {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated function names; default is every function.
        #[arg(long, value_delimiter = ',')]
        mask: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        offset: u64,
        /// Also print the masked DAG in DOT.
        #[arg(long)]
        dot: bool,
    },
    /// Run one simulation from the config's [sim] section.
    Simulate {
        /// Include the full event trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run the config's [sweep] over its [sim] section and write CSV.
    Sweep {
        /// Output file; `-` for stdout.
        #[arg(long, short, default_value = "-")]
        output: PathBuf,
    },
    /// Render a sweep CSV as an SVG chart.
    Report {
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    /// `host:port` or `:port`.
    #[arg(long, env = "RAPTOR_LISTEN")]
    listen: Option<String>,
    #[arg(long, env = "RAPTOR_PEER_PORT")]
    peer_port: Option<u16>,
    /// URL accepting follower `/run` bodies, or `loopback` for this proxy.
    #[arg(long, env = "RAPTOR_CONTROLLER")]
    controller: Option<String>,
    /// Host name peers use to reach this proxy.
    #[arg(long)]
    advertise_host: Option<String>,
    #[arg(long, env = "RAPTOR_TERM_KILL_DELAY_MS")]
    term_kill_delay_ms: Option<u64>,
    /// Directory for unpacked code and task working directories.
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    allow_reinit: bool,
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log_level).unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        // A closed pipe, e.g. `raptor simulate | head`, is not an error.
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match cli.command {
        Command::Serve(args) => serve(args, file),
        Command::Validate { manifest } => validate(&manifest),
        Command::Schedule { manifest, mask, offset, dot } => schedule(&manifest, mask, offset, dot),
        Command::Simulate { trace } => simulate(&sim_config(&file, seed)?, trace),
        Command::Sweep { output } => sweep(&file, seed, &output),
        Command::Report { input, output } => report::render(&input, &output),
    }
}

fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn sim_config(file: &ConfigFile, seed: u64) -> Result<SimConfig> {
    let Some(sim) = &file.sim else { bail!("the config file has no [sim] section") };
    sim.to_sim_config(seed)
}

fn validate(path: &Path) -> Result<()> {
    let manifest = load_manifest(path)?;
    let dag = manifest.build_dag();
    let mut text = format!("ok: {} functions, manifest id {}\n", manifest.len(), manifest.manifest_id());
    text += &format!("sources: {}\nsinks: {}\n", dag.sources().join(" "), dag.sinks().join(" "));
    for (from, to) in dag.edges() {
        text += &format!("{from} -> {to}\n");
    }
    emit(&text)
}

fn schedule(path: &Path, mask: Option<Vec<String>>, offset: u64, dot: bool) -> Result<()> {
    let manifest = load_manifest(path)?;
    let mask = match mask {
        Some(names) => {
            let mask = FunctionMask::new(names)?;
            mask.validate_against(&manifest)?;
            mask
        }
        None => FunctionMask::all(&manifest),
    };
    let dag = manifest.build_dag().apply_mask(&mask)?;
    let mut text = build_schedule(&dag, offset).order().join(" ") + "\n";
    if dot {
        text += &dag.to_dot();
    }
    emit(&text)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn simulate(cfg: &SimConfig, trace: bool) -> Result<()> {
    let result = run_sim(cfg);
    validate_trace(cfg, &result).context("simulation produced an invalid trace")?;
    let members: Vec<_> = result
        .members
        .iter()
        .map(|m| {
            json!({
                "offset": m.offset,
                "crashed": m.crashed,
                "schedule": m.schedule,
                "realized": m.realized,
                "view": m.view,
                "completed_ms": m.completed_at.map(ms),
            })
        })
        .collect();
    let mut summary = json!({
        "job_latency_ms": ms(result.job_latency),
        "job_failed": result.job_failed,
        "outputs": result.outputs,
        "executions_per_task": result.executions_per_task,
        "total_executions": result.total_executions(),
        "messages_sent": result.messages_sent,
        "invocations": result.invocations,
        "serviced_peering_requests": result.serviced_peering_requests,
        "failed_members": result.failed_members,
        "realized_flight_size": result.realized_flight_size,
        "members": members,
    });
    if trace {
        summary["trace"] = serde_json::to_value(&result.trace)?;
    }
    emit(&(serde_json::to_string_pretty(&summary)? + "\n"))
}

fn sweep(file: &ConfigFile, seed: u64, output: &Path) -> Result<()> {
    let Some(section) = &file.sweep else { bail!("the config file has no [sweep] section") };
    section.validate()?;
    let cfg = sim_config(file, seed)?;
    let mut buf = Vec::new();
    match section {
        config::SweepSection::Failure { p_values, runs_per_point } => {
            write_csv(&sweep_failure(&cfg, p_values, *runs_per_point)?, &mut buf)?;
        }
        config::SweepSection::FlightSize { flight_sizes, runs_per_point } => {
            write_csv(&sweep_flight_size(&cfg, flight_sizes, *runs_per_point)?, &mut buf)?;
        }
        config::SweepSection::Coordinator => {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["mode", "cold_latency_ms", "warm_latency_ms", "invocations"])?;
            for row in compare_coordinator(&cfg) {
                let mode = format!("{:?}", row.mode).to_lowercase();
                w.write_record([
                    mode,
                    format!("{:.3}", ms(row.cold_latency)),
                    format!("{:.3}", ms(row.warm_latency)),
                    row.invocations.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    if output == Path::new("-") {
        emit(std::str::from_utf8(&buf)?)?;
    } else {
        std::fs::write(output, &buf).with_context(|| format!("writing {}", output.display()))?;
    }
    Ok(())
}

fn serve(args: ServeArgs, file: ConfigFile) -> Result<()> {
    let s = file.serve;
    let root = args.root.or(s.root).unwrap_or_else(|| std::env::temp_dir().join("raptor"));
    let listen = parse_listen(args.listen.or(s.listen).as_deref().unwrap_or("127.0.0.1:8080"))?;
    let peer_port = args.peer_port.or(s.peer_port).unwrap_or(8081);
    let controller = args.controller.or(s.controller).map(|c| match c.as_str() {
        "loopback" => Controller::Loopback,
        _ => Controller::Url(c),
    });

    let defaults = ProxyConfig::new(&root);
    let mut executor = ExecutorConfig { niceness: s.niceness, ..defaults.executor.clone() };
    if let Some(ms) = args.term_kill_delay_ms.or(s.term_kill_delay_ms) {
        executor.term_to_kill_delay = Duration::from_millis(ms);
    }
    let cfg = ProxyConfig {
        listen,
        peer_listen: std::net::SocketAddr::new(listen.ip(), peer_port),
        advertise_host: args.advertise_host.or(s.advertise_host),
        controller,
        executor,
        allow_reinit: args.allow_reinit || s.allow_reinit.unwrap_or(false),
        activation_timeout: s.activation_timeout_ms.map(Duration::from_millis).unwrap_or(defaults.activation_timeout),
        peering_timeout: s.peering_timeout_ms.map(Duration::from_millis).unwrap_or(defaults.peering_timeout),
        ..defaults
    };

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let handle = raptor_proxy::serve(cfg).await?;
        eprintln!("listening on http://{} (peers on {})", handle.http_addr, handle.peer_endpoint);
        let cancel = handle.cancel_token();
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())?;
        tokio::spawn(async move {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
            cancel.cancel();
        });
        handle.wait().await;
        anyhow::Ok(())
    })
}
