use std::io;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio::task::JoinHandle;
use tokio::time::{interval, MissedTickBehavior};
use tokio_util::codec::{Framed, LengthDelimitedCodec};
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

use super::{frame_codec, unix_now_us};
use crate::client::{Client, ClientConfig, ClientError, ClientStats, IngestOutcome, Phase};
use crate::wire::{decode_envelope, Kind, MessageEnvelope};

type Conn = Framed<TcpStream, LengthDelimitedCodec>;
type State = Arc<Mutex<Client>>;

/// Receives every DATA envelope relayed to this client.
pub type DataSink = Arc<dyn Fn(MessageEnvelope) + Send + Sync>;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("could not connect to {addr} after {attempts} attempt(s): {source}")]
    Connect {
        addr: String,
        attempts: u32,
        #[source]
        source: io::Error,
    },
    #[error("connection to {0} lost")]
    ConnectionLost(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Connection attempts before giving up, for the first connect and for
    /// every reconnect.
    pub connect_attempts: u32,
    pub retry_delay: Duration,
    pub reconnect: bool,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            connect_attempts: 5,
            retry_delay: Duration::from_millis(500),
            reconnect: true,
        }
    }
}

pub struct ClientHandle {
    state: State,
    stop: CancellationToken,
    driver: JoinHandle<Result<(), RuntimeError>>,
}

impl ClientHandle {
    /// Offers a locally produced message, stamped with the current time.
    pub fn ingest(&self, payload: impl Into<Bytes>, topic: &str) -> IngestOutcome {
        self.ingest_at(payload, topic, unix_now_us())
    }

    pub fn ingest_at(&self, payload: impl Into<Bytes>, topic: &str, now_us: u64) -> IngestOutcome {
        self.lock().ingest_local_message(payload, topic, now_us)
    }

    pub fn stats(&self) -> ClientStats {
        self.lock().stats().clone()
    }

    pub fn in_flight(&self) -> u64 {
        self.lock().in_flight()
    }

    pub fn is_connected(&self) -> bool {
        self.lock().is_connected()
    }

    pub fn is_idle(&self) -> bool {
        let c = self.lock();
        !c.has_pending() && c.in_flight() == 0
    }

    /// Waits until every queued message is sent and acknowledged.
    pub async fn drain(&self, timeout: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + timeout;
        while !self.is_idle() {
            if tokio::time::Instant::now() >= deadline || self.driver.is_finished() {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        true
    }

    /// Announces unsubscriptions, closes the connection and returns how
    /// the driver ended.
    pub async fn shutdown(self) -> Result<(), RuntimeError> {
        self.stop.cancel();
        self.driver.await.unwrap_or(Ok(()))
    }

    /// Resolves when the driver stops on its own, e.g. after the connection
    /// is lost and cannot be re-established.
    pub async fn closed(&mut self) -> Result<(), RuntimeError> {
        (&mut self.driver).await.unwrap_or(Ok(()))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Client> {
        self.state.lock().expect("client lock")
    }
}

/// Connects (with bounded retries), sends HELLO and the startup
/// subscriptions, and starts the scheduler.
pub async fn connect_client(
    config: ClientConfig,
    sink: DataSink,
    options: ClientOptions,
) -> Result<ClientHandle, RuntimeError> {
    let addr = config.server_addr.clone();
    let tick = Duration::from_millis(config.scheduler_tick_ms);
    let client = Client::new(config, unix_now_us())?;
    let state: State = Arc::new(Mutex::new(client));
    let stop = CancellationToken::new();

    let mut conn = connect_with_retries(&addr, &options, &stop).await?;
    open_session(&state, &mut conn).await?;
    info!(%addr, "connected");

    let driver = tokio::spawn(drive(state.clone(), conn, sink, options, addr, tick, stop.clone()));
    Ok(ClientHandle { state, stop, driver })
}

async fn connect_with_retries(
    addr: &str,
    options: &ClientOptions,
    stop: &CancellationToken,
) -> Result<Conn, RuntimeError> {
    let attempts = options.connect_attempts.max(1);
    let mut last = None;
    for attempt in 1..=attempts {
        match TcpStream::connect(addr).await {
            Ok(stream) => {
                let _ = stream.set_nodelay(true);
                return Ok(Framed::new(stream, frame_codec()));
            }
            Err(e) => {
                debug!(%addr, attempt, %e, "connect failed");
                last = Some(e);
            }
        }
        if attempt < attempts {
            tokio::select! {
                _ = stop.cancelled() => break,
                _ = tokio::time::sleep(options.retry_delay) => {}
            }
        }
    }
    Err(RuntimeError::Connect {
        addr: addr.to_owned(),
        attempts,
        source: last.unwrap_or_else(|| io::Error::new(io::ErrorKind::Interrupted, "stopped")),
    })
}

async fn send_all(conn: &mut Conn, frames: Vec<MessageEnvelope>) -> io::Result<()> {
    for e in frames {
        let bytes = e.encode().map_err(|err| io::Error::new(io::ErrorKind::InvalidData, err))?;
        conn.feed(Bytes::from(bytes)).await?;
    }
    SinkExt::<Bytes>::flush(conn).await
}

async fn open_session(state: &State, conn: &mut Conn) -> Result<(), RuntimeError> {
    let opening = state.lock().expect("client lock").on_connect(unix_now_us())?;
    send_all(conn, opening).await?;
    Ok(())
}

enum SessionEnd {
    Stopped,
    Lost,
}

async fn drive(
    state: State,
    mut conn: Conn,
    sink: DataSink,
    options: ClientOptions,
    addr: String,
    tick: Duration,
    stop: CancellationToken,
) -> Result<(), RuntimeError> {
    loop {
        match session(&state, &mut conn, &sink, tick, &stop).await {
            SessionEnd::Stopped => return Ok(()),
            SessionEnd::Lost => {
                state.lock().expect("client lock").on_disconnect();
                if !options.reconnect {
                    return Err(RuntimeError::ConnectionLost(addr));
                }
                warn!(%addr, "connection lost, reconnecting");
                conn = match connect_with_retries(&addr, &options, &stop).await {
                    Ok(c) => c,
                    Err(_) if stop.is_cancelled() => return Ok(()),
                    Err(e) => return Err(e),
                };
                if open_session(&state, &mut conn).await.is_err() {
                    continue;
                }
                info!(%addr, "reconnected");
            }
        }
    }
}

async fn session(
    state: &State,
    conn: &mut Conn,
    sink: &DataSink,
    tick: Duration,
    stop: &CancellationToken,
) -> SessionEnd {
    let mut ticker = interval(tick);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        let out = tokio::select! {
            _ = stop.cancelled() => {
                let bye = state
                    .lock()
                    .expect("client lock")
                    .announce_subscriptions(Phase::Shutdown, unix_now_us())
                    .unwrap_or_default();
                let _ = send_all(conn, bye).await;
                let _ = SinkExt::<Bytes>::close(conn).await;
                return SessionEnd::Stopped;
            }
            _ = ticker.tick() => run_scheduler(state),
            frame = conn.next() => match frame {
                Some(Ok(bytes)) => match decode_envelope(&bytes) {
                    Ok(e) if e.kind == Kind::Pong => {
                        let mut c = state.lock().expect("client lock");
                        let threshold = c.config().backpressure_threshold;
                        let before = c.in_flight();
                        let after = c.handle_pong(&e);
                        drop(c);
                        if before >= threshold && after < threshold {
                            run_scheduler(state)
                        } else {
                            Vec::new()
                        }
                    }
                    Ok(e) if e.kind == Kind::Data => {
                        sink(e);
                        Vec::new()
                    }
                    Ok(e) => {
                        debug!(kind = ?e.kind, "ignoring frame");
                        Vec::new()
                    }
                    Err(err) => {
                        debug!(%err, "dropping malformed frame");
                        Vec::new()
                    }
                },
                Some(Err(e)) => {
                    debug!(%e, "read failed");
                    return SessionEnd::Lost;
                }
                None => return SessionEnd::Lost,
            },
        };
        if !out.is_empty() && send_all(conn, out).await.is_err() {
            return SessionEnd::Lost;
        }
    }
}

fn run_scheduler(state: &State) -> Vec<MessageEnvelope> {
    state
        .lock()
        .expect("client lock")
        .run_scheduler(unix_now_us())
        .unwrap_or_default()
}
