use clap::{Args, Parser, Subcommand, ValueEnum};
use pvran::bench::{
    capacity_estimate, compare_transports, emit_report, latency_oneway, render_report, sustained_stream_test,
    BenchResult, TransportKind,
};
use pvran::iqcore::{bytes_per_subframe, BandwidthProfile, SliceConfig};
use pvran::orchestrator::{
    serve, Client, CreateSlice, Orchestrator, OrchestratorOptions, ServeConfig, TrafficSpec, DEFAULT_HTTP_PORT,
    DEFAULT_REQREP_PORT,
};
use pvran::radiodev::ClockMode;
use serde::Serialize;
use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Parser)]
#[command(name = "pvran", version, about = "Paravirtualized RAN front-end over a simulated SDR")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the orchestrator: request-reply port plus HTTP gateway.
    Serve(ServeArgs),
    /// Create or destroy slices on a running orchestrator.
    Slice {
        #[command(flatten)]
        conn: Conn,
        #[command(subcommand)]
        cmd: SliceCmd,
    },
    /// Print the orchestrator's current metrics snapshot.
    Metrics {
        #[command(flatten)]
        conn: Conn,
    },
    /// Transport and streaming measurements.
    Bench {
        /// Also write the report to this file.
        #[arg(long, global = true)]
        report: Option<PathBuf>,
        #[command(subcommand)]
        cmd: BenchCmd,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, env = "PVRAN_REQREP_PORT", default_value_t = DEFAULT_REQREP_PORT)]
    reqrep_port: u16,
    #[arg(long, env = "PVRAN_HTTP_PORT", default_value_t = DEFAULT_HTTP_PORT)]
    http_port: u16,
    /// Radio channels on the simulated device.
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, value_enum, default_value_t = Clock::Paced)]
    clock: Clock,
}

#[derive(Clone, Copy, ValueEnum)]
enum Clock {
    Paced,
    Fast,
}

#[derive(Args)]
struct Conn {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "PVRAN_REQREP_PORT", default_value_t = DEFAULT_REQREP_PORT)]
    port: u16,
}

#[derive(Subcommand)]
enum SliceCmd {
    /// Create a slice from a TOML slice configuration.
    Create {
        #[arg(long)]
        config: PathBuf,
        /// Offered load per direction, bits per second.
        #[arg(long)]
        offered_bps: Option<f64>,
        #[arg(long)]
        payload_len: Option<usize>,
    },
    Destroy { slice_id: u32 },
    List,
    /// Move a running slice to new bands (restarts it).
    SetBand {
        slice_id: u32,
        #[arg(long)]
        dl_hz: u64,
        #[arg(long)]
        ul_hz: u64,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// One-way latency of a single transport.
    Latency {
        #[arg(long, default_value = "shm")]
        transport: TransportKind,
        #[arg(long, default_value_t = 30_720)]
        bytes: usize,
        #[arg(long, default_value_t = 10_000)]
        iters: usize,
    },
    /// Both transports back to back with identical parameters.
    Compare {
        #[arg(long, default_value_t = 30_720)]
        bytes: usize,
        #[arg(long, default_value_t = 10_000)]
        iters: usize,
    },
    /// Slices per subframe period each transport could carry.
    Capacity {
        #[arg(long, default_value_t = 25)]
        prbs: u32,
        #[arg(long, default_value_t = 5_000)]
        iters: usize,
    },
    /// Paced end-to-end streaming of one slice.
    Stream {
        #[arg(long, default_value_t = 25)]
        prbs: u32,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
    },
}

type Fallible = Result<(), Box<dyn std::error::Error>>;

fn print_json(v: &impl Serialize) -> Fallible {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run_serve(a: ServeArgs) -> Fallible {
    let clock = match a.clock {
        Clock::Paced => ClockMode::Paced,
        Clock::Fast => ClockMode::Fast,
    };
    let orch = Arc::new(Orchestrator::start(OrchestratorOptions { channels: a.channels, clock, ..Default::default() })?);
    let cfg = ServeConfig { bind: a.bind, reqrep_port: a.reqrep_port, http_port: a.http_port, ..Default::default() };
    let handle = serve(orch, cfg)?;
    eprintln!("request-reply on {}, http on {}", handle.reqrep_addr, handle.http_addr);
    handle.wait();
    Ok(())
}

fn run_slice(conn: Conn, cmd: SliceCmd) -> Fallible {
    let mut c = Client::connect((conn.host.as_str(), conn.port))?;
    match cmd {
        SliceCmd::Create { config, offered_bps, payload_len } => {
            let config = SliceConfig::load(&config)?;
            let traffic = (offered_bps.is_some() || payload_len.is_some()).then(|| {
                let d = TrafficSpec::default();
                TrafficSpec {
                    offered_bps: offered_bps.unwrap_or(d.offered_bps),
                    payload_len: payload_len.unwrap_or(d.payload_len),
                }
            });
            print_json(&c.create(&CreateSlice { config, traffic })?)
        }
        SliceCmd::Destroy { slice_id } => print_json(&c.destroy(slice_id)?),
        SliceCmd::List => print_json(&c.list()?),
        SliceCmd::SetBand { slice_id, dl_hz, ul_hz } => print_json(&c.set_band(slice_id, dl_hz, ul_hz)?),
    }
}

fn run_bench(report: Option<PathBuf>, cmd: BenchCmd) -> Fallible {
    let results = match cmd {
        BenchCmd::Latency { transport, bytes, iters } => {
            let stats = latency_oneway(transport, bytes, iters, (iters / 10).max(100))?;
            vec![BenchResult::Latency { transport, msg_bytes: bytes, stats }]
        }
        BenchCmd::Compare { bytes, iters } => vec![BenchResult::Comparison(compare_transports(bytes, iters)?)],
        BenchCmd::Capacity { prbs, iters } => {
            let profile = BandwidthProfile::from_prbs(prbs)?;
            let c = compare_transports(bytes_per_subframe(prbs)?, iters)?;
            vec![
                BenchResult::Capacity(capacity_estimate(profile, TransportKind::ShmVchan, &c.shm)),
                BenchResult::Capacity(capacity_estimate(profile, TransportKind::PubsubSocket, &c.pubsub)),
                BenchResult::Comparison(c),
            ]
        }
        BenchCmd::Stream { prbs, seconds } => {
            vec![BenchResult::Stream(sustained_stream_test(BandwidthProfile::from_prbs(prbs)?, seconds)?)]
        }
    };
    let text = match report {
        Some(path) => emit_report(&results, &path)?,
        None => render_report(&results, SystemTime::now().duration_since(UNIX_EPOCH)?.as_millis()),
    };
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("PVRAN_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Serve(a) => run_serve(a),
        Cmd::Slice { conn, cmd } => run_slice(conn, cmd),
        Cmd::Metrics { conn } => {
            Client::connect((conn.host.as_str(), conn.port)).map_err(Into::into).and_then(|mut c| print_json(&c.metrics()?))
        }
        Cmd::Bench { report, cmd } => run_bench(report, cmd),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pvran: {e}");
            ExitCode::FAILURE
        }
    }
}
