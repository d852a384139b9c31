//! The `fleetlink` command line.
//!
//! Exit codes: 0 success, 2 configuration or scenario error, 3 connection
//! error, 4 IO error.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use clap::{Parser, Subcommand};
use futures_util::{SinkExt, StreamExt};
use tokio::sync::mpsc;
use tokio_util::codec::Framed;

use crate::bench::{
    compute_metrics, export_csv, read_latency_csv, run_scenario, run_scenario_wall_clock, summary_row,
    write_summary_csv, BenchError, ScenarioResult, ScenarioSuite, SummaryRow,
};
use crate::client::{ClientConfig, IngestOutcome, TopicPublishSpec, TopicSubscribeSpec};
use crate::config::{load_client_config, load_server_config, validate_server_config, ConfigError};
use crate::runtime::{
    connect_client, frame_codec, start_server, unix_now_us, ClientHandle, ClientOptions, DataSink, RuntimeError,
};
use crate::wire::{decode_envelope, HelloBody, Kind, MessageEnvelope};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONNECTION: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fleetlink", version, about = "Fleet message relay, client and link benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the relay server until SIGINT or SIGTERM.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
        /// Overrides `ws_listen` from the config.
        #[arg(long)]
        ws_listen: Option<String>,
    },
    /// Run a client: print received DATA as TSV, optionally publish lines
    /// read from stdin as `topic<TAB>payload`.
    Client {
        #[arg(long)]
        config: PathBuf,
        /// Read local messages from stdin; exit once it ends and queues drain.
        #[arg(long)]
        stdin: bool,
    },
    /// Publish synthetic payloads through the full client pipeline.
    Publish {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        topic: String,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        payload_bytes: usize,
        #[arg(long)]
        duration: f64,
    },
    /// Print one TSV line per received DATA frame: topic, seq, latency_ms, bytes.
    Subscribe {
        #[arg(long)]
        config: PathBuf,
        /// Extra topic names (matched literally) besides the config's remote_topics.
        #[arg(long)]
        topic: Vec<String>,
        /// Exit after this many frames.
        #[arg(long)]
        count: Option<u64>,
        /// Exit after this many seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Run a scenario file on the simulator and write CSVs.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pace the simulation against the wall clock at this speed-up.
        #[arg(long)]
        wall_clock: Option<f64>,
        /// Client config whose server receives each run's summary on /bench/metrics.
        #[arg(long)]
        metrics_config: Option<PathBuf>,
    },
    /// Recompute latency and throughput statistics from a latency CSV.
    Report {
        #[arg(long)]
        latency: PathBuf,
        /// Dropout window `START:END` in seconds, for recovery time.
        #[arg(long, value_parser = parse_window)]
        dropout: Option<(f64, f64)>,
    },
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a < b {
        Ok((a, b))
    } else {
        Err("START must be below END".into())
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Connection(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Connection(_) => EXIT_CONNECTION,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Connection(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Client(c) => CliError::Config(c.to_string()),
            other => CliError::Connection(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidScenario { .. } | BenchError::ScenarioFile { .. } => CliError::Config(e.to_string()),
            BenchError::Io(_) | BenchError::Csv(_) => CliError::Io(e.to_string()),
        }
    }
}

/// Log output goes to stderr, filtered by `FLEETLINK_LOG` (default `info`).
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("FLEETLINK_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Runs one invocation and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Bench {
            scenario,
            out,
            wall_clock,
            metrics_config,
        } => bench(&scenario, &out, wall_clock, metrics_config.as_deref()),
        Command::Report { latency, dropout } => report(&latency, dropout),
        networked => {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Io(format!("starting runtime: {e}")))?;
            rt.block_on(async move {
                match networked {
                    Command::Serve {
                        config,
                        listen,
                        ws_listen,
                    } => serve(&config, listen, ws_listen).await,
                    Command::Client { config, stdin } => client(&config, stdin).await,
                    Command::Publish {
                        config,
                        topic,
                        rate,
                        payload_bytes,
                        duration,
                    } => publish(&config, &topic, rate, payload_bytes, duration).await,
                    Command::Subscribe {
                        config,
                        topic,
                        count,
                        duration,
                    } => subscribe(&config, topic, count, duration).await,
                    Command::Bench { .. } | Command::Report { .. } => unreachable!("handled above"),
                }
            })
        }
    }
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

async fn serve(path: &Path, listen: Option<String>, ws_listen: Option<String>) -> Result<(), CliError> {
    let mut config = load_server_config(path)?;
    if let Some(l) = listen {
        config.listen = l;
    }
    if ws_listen.is_some() {
        config.ws_listen = ws_listen;
    }
    validate_server_config(&config).map_err(|(field, msg)| CliError::Config(format!("--{field}: {msg}")))?;
    let server = start_server(&config)
        .await
        .map_err(|e| CliError::Io(format!("binding {}: {e}", config.listen)))?;
    println!("listen\t{}", server.local_addr);
    if let Some(ws) = server.ws_addr {
        println!("ws_listen\t{ws}");
    }
    let _ = std::io::stdout().flush();
    shutdown_signal().await;
    tracing::info!("shutting down");
    server.shutdown().await;
    Ok(())
}

fn client_options() -> ClientOptions {
    ClientOptions {
        connect_attempts: 3,
        retry_delay: Duration::from_millis(200),
        reconnect: true,
    }
}

/// Prints each DATA frame as `topic<TAB>seq<TAB>latency_ms<TAB>bytes`.
fn tsv_sink() -> (DataSink, mpsc::UnboundedReceiver<MessageEnvelope>) {
    let (tx, rx) = mpsc::unbounded_channel();
    let sink: DataSink = Arc::new(move |e| {
        let _ = tx.send(e);
    });
    (sink, rx)
}

fn tsv_line(e: &MessageEnvelope) -> String {
    let latency_us = unix_now_us() as i64 - e.timestamp_us as i64;
    format!("{}\t{}\t{:.3}\t{}", e.topic, e.seq, latency_us as f64 / 1000.0, e.payload.len())
}

const TSV_HEADER: &str = "topic\tseq\tlatency_ms\tbytes";

async fn client(path: &Path, read_stdin: bool) -> Result<(), CliError> {
    let config = load_client_config(path)?;
    let (sink, mut rx) = tsv_sink();
    let mut handle = connect_client(config, sink, client_options()).await?;
    println!("{TSV_HEADER}");

    let (line_tx, mut line_rx) = mpsc::unbounded_channel::<String>();
    if read_stdin {
        std::thread::spawn(move || {
            for line in std::io::stdin().lock().lines() {
                let Ok(line) = line else { break };
                if line_tx.send(line).is_err() {
                    break;
                }
            }
        });
    } else {
        // keep the channel open so the loop below only ends on a signal
        std::mem::forget(line_tx);
    }

    let signal = shutdown_signal();
    tokio::pin!(signal);
    loop {
        tokio::select! {
            _ = &mut signal => break,
            Some(e) = rx.recv() => println!("{}", tsv_line(&e)),
            line = line_rx.recv() => match line {
                Some(line) => ingest_line(&handle, &line),
                None => {
                    handle.drain(Duration::from_secs(10)).await;
                    break;
                }
            },
            r = handle.closed() => return r.map_err(CliError::from),
        }
    }
    while let Ok(e) = rx.try_recv() {
        println!("{}", tsv_line(&e));
    }
    handle.shutdown().await.map_err(CliError::from)
}

fn ingest_line(handle: &ClientHandle, line: &str) {
    let (topic, payload) = line.split_once('\t').unwrap_or((line, ""));
    let outcome = handle.ingest(Bytes::copy_from_slice(payload.as_bytes()), topic.trim());
    if outcome == IngestOutcome::UnknownTopic {
        tracing::warn!(topic, "not a configured local topic");
    }
}

async fn publish(path: &Path, topic: &str, rate: f64, payload_bytes: usize, duration: f64) -> Result<(), CliError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(CliError::Config(format!("--rate must be > 0, got {rate}")));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(CliError::Config(format!("--duration must be >= 0, got {duration}")));
    }
    let mut config: ClientConfig = load_client_config(path)?;
    if !config.local_topics.iter().any(|t| t.topic == topic) {
        config
            .local_topics
            .push(TopicPublishSpec::new(topic, "fleetlink/Synthetic", 1.0, rate, false));
    }
    config
        .validate()
        .map_err(|e| CliError::Config(format!("--topic {topic:?}: {e}")))?;

    let (sink, _rx) = tsv_sink();
    let handle = connect_client(config, sink, client_options()).await?;
    let payload = Bytes::from(vec![0u8; payload_bytes]);
    let period = Duration::from_secs_f64(1.0 / rate);
    let count = (rate * duration - 1e-9).ceil().max(0.0) as u64;
    let start = tokio::time::Instant::now();
    let start_us = unix_now_us();
    for k in 0..count {
        tokio::time::sleep_until(start + period * k as u32).await;
        // stamp the nominal publish time so timer jitter cannot trip the rate limit
        let now_us = start_us + (k as f64 * 1e6 / rate).round() as u64;
        handle.ingest_at(payload.clone(), topic, now_us);
    }
    let drained = handle.drain(Duration::from_secs(10)).await;
    let stats = handle.stats();
    println!("accepted\t{}", stats.accepted);
    println!("rate_limited\t{}", stats.rate_limited);
    println!("replaced\t{}", stats.replaced);
    println!("overflow\t{}", stats.no_drop_overflow);
    println!("sent\t{}", stats.data_sent);
    let result = handle.shutdown().await;
    result?;
    if !drained {
        return Err(CliError::Connection("queued messages were not acknowledged in time".into()));
    }
    Ok(())
}

async fn subscribe(path: &Path, topics: Vec<String>, count: Option<u64>, duration: Option<f64>) -> Result<(), CliError> {
    let mut config = load_client_config(path)?;
    for t in topics {
        config.remote_topics.push(TopicSubscribeSpec {
            topic: t,
            msg_type: String::new(),
        });
    }
    let (sink, mut rx) = tsv_sink();
    let mut handle = connect_client(config, sink, client_options()).await?;
    println!("{TSV_HEADER}");
    let _ = std::io::stdout().flush();

    let deadline = duration.map(|d| tokio::time::Instant::now() + Duration::from_secs_f64(d.max(0.0)));
    let timer = async move {
        match deadline {
            Some(d) => tokio::time::sleep_until(d).await,
            None => std::future::pending().await,
        }
    };
    tokio::pin!(timer);
    let signal = shutdown_signal();
    tokio::pin!(signal);
    let mut seen = 0u64;
    while count.is_none_or(|c| seen < c) {
        tokio::select! {
            _ = &mut signal => break,
            _ = &mut timer => break,
            Some(e) = rx.recv() => {
                println!("{}", tsv_line(&e));
                let _ = std::io::stdout().flush();
                seen += 1;
            }
            r = handle.closed() => return r.map_err(CliError::from),
        }
    }
    handle.shutdown().await.map_err(CliError::from)
}

fn bench(scenario: &Path, out: &Path, wall_clock: Option<f64>, metrics_config: Option<&Path>) -> Result<(), CliError> {
    let suite = ScenarioSuite::load(scenario)?;
    let scenarios = suite.expand()?;
    let metrics_target = metrics_config.map(load_client_config).transpose()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;

    let mut rows = Vec::new();
    let mut results = Vec::new();
    for s in &scenarios {
        let r = match wall_clock {
            Some(speed) => run_scenario_wall_clock(s, speed)?,
            None => run_scenario(s)?,
        };
        export_csv(&r, out)?;
        rows.push(summary_row(&r));
        results.push(r);
    }
    let summary = out.join(format!("{}_summary.csv", suite.name));
    write_summary_csv(&rows, &summary)?;
    print_table(&rows);

    if let Some(config) = metrics_target {
        publish_metrics(&config, &results)?;
    }
    Ok(())
}

fn print_table(rows: &[SummaryRow]) {
    let f = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.1}"));
    println!(
        "{:<34} {:>10} {:>10} {:>10} {:>8} {:>7} {:>12} {:>9}",
        "run", "median_ms", "p95_ms", "max_ms", "msgs/s", "drops", "egress_B", "recovery"
    );
    for r in rows {
        println!(
            "{:<34} {:>10} {:>10} {:>10} {:>8.2} {:>7} {:>12} {:>9}",
            r.scenario,
            f(r.median_latency_ms),
            f(r.p95_latency_ms),
            f(r.max_latency_ms),
            r.mean_throughput,
            r.drops,
            r.producer_egress_bytes,
            r.recovery_s.map_or("-".to_owned(), |v| format!("{v:.2}s")),
        );
    }
}

/// Sends each summary as a DATA frame on the metrics topic, then waits for
/// the relay to acknowledge them.
fn publish_metrics(config: &ClientConfig, results: &[ScenarioResult]) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(async {
        let conn_err = |e: std::io::Error| CliError::Connection(format!("{}: {e}", config.server_addr));
        let stream = tokio::net::TcpStream::connect(&config.server_addr).await.map_err(conn_err)?;
        let mut conn = Framed::new(stream, frame_codec());
        let hello = HelloBody::new(config.identity.as_str(), config.secret.as_str())
            .map_err(|e| CliError::Config(e.to_string()))?;
        let now = unix_now_us();
        let mut frames = vec![MessageEnvelope::hello(&hello, now)];
        for (i, r) in results.iter().enumerate() {
            frames.push(r.metrics_envelope(i as u64 + 1, now));
        }
        frames.push(MessageEnvelope::ping(results.len() as u64, now));
        for f in frames {
            let bytes = f.encode().map_err(|e| CliError::Config(e.to_string()))?;
            conn.send(Bytes::from(bytes)).await.map_err(conn_err)?;
        }
        let wait = tokio::time::timeout(Duration::from_secs(5), async {
            while let Some(frame) = conn.next().await {
                if let Ok(e) = decode_envelope(&frame.map_err(conn_err)?) {
                    if e.kind == Kind::Pong && e.seq >= results.len() as u64 {
                        return Ok(());
                    }
                }
            }
            Err(CliError::Connection("relay closed the metrics connection".into()))
        });
        wait.await
            .map_err(|_| CliError::Connection("no acknowledgement for metrics".into()))?
    })
}

fn report(latency: &Path, dropout: Option<(f64, f64)>) -> Result<(), CliError> {
    let records = read_latency_csv(latency)?;
    let windows: Vec<(f64, f64)> = dropout.into_iter().collect();
    let m = compute_metrics(&records, &windows);
    let ms = |v: Option<u64>| v.map_or(String::new(), |v| (v as f64 / 1000.0).to_string());
    println!("deliveries,median_latency_ms,p95_latency_ms,max_latency_ms,mean_throughput,recovery_s");
    println!(
        "{},{},{},{},{},{}",
        records.len(),
        ms(m.median_latency_us),
        ms(m.p95_latency_us),
        ms(m.max_latency_us),
        m.mean_throughput,
        m.recovery_time_s.map_or(String::new(), |v| v.to_string()),
    );
    Ok(())
}
