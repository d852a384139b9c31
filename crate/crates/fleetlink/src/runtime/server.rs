use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use futures_util::{Sink, SinkExt, Stream, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinSet;
use tokio_tungstenite::tungstenite::Message;
use tokio_util::codec::Framed;
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

use super::frame_codec;
use crate::server::{ConnId, Relay, RelayStats, ServerConfig, ServerConfigError};

/// Relay state plus one outbound queue per connection. Both live behind
/// one lock so a fan-out sees a consistent subscriber set and frames to
/// each connection keep their order.
struct Shared {
    relay: Relay,
    writers: HashMap<ConnId, mpsc::UnboundedSender<Bytes>>,
}

type SharedRef = Arc<Mutex<Shared>>;

/// How long a closing connection may spend flushing queued frames.
const WRITER_GRACE: Duration = Duration::from_secs(1);

pub struct ServerHandle {
    pub local_addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    shared: SharedRef,
    cancel: CancellationToken,
    tasks: JoinSet<()>,
}

impl ServerHandle {
    pub fn stats(&self) -> RelayStats {
        self.shared.lock().expect("relay lock").relay.stats().clone()
    }

    pub fn connection_count(&self) -> usize {
        self.shared.lock().expect("relay lock").relay.connection_count()
    }

    /// Stops accepting, closes every connection and waits for the tasks.
    pub async fn shutdown(mut self) {
        self.cancel.cancel();
        while self.tasks.join_next().await.is_some() {}
    }
}

/// Binds the configured listeners and serves until shut down.
pub async fn start_server(config: &ServerConfig) -> io::Result<ServerHandle> {
    let relay = Relay::from_config(config).map_err(|e: ServerConfigError| {
        io::Error::new(io::ErrorKind::InvalidInput, e.to_string())
    })?;
    let shared = Arc::new(Mutex::new(Shared {
        relay,
        writers: HashMap::new(),
    }));
    let cancel = CancellationToken::new();
    let mut tasks = JoinSet::new();

    let tcp = TcpListener::bind(&config.listen).await?;
    let local_addr = tcp.local_addr()?;
    info!(%local_addr, "listening for stream connections");
    tasks.spawn(accept_loop(tcp, shared.clone(), cancel.clone(), false));

    let ws_addr = match &config.ws_listen {
        Some(addr) => {
            let ws = TcpListener::bind(addr).await?;
            let ws_addr = ws.local_addr()?;
            info!(%ws_addr, "listening for websocket connections");
            tasks.spawn(accept_loop(ws, shared.clone(), cancel.clone(), true));
            Some(ws_addr)
        }
        None => None,
    };

    Ok(ServerHandle {
        local_addr,
        ws_addr,
        shared,
        cancel,
        tasks,
    })
}

async fn accept_loop(listener: TcpListener, shared: SharedRef, cancel: CancellationToken, websocket: bool) {
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            _ = cancel.cancelled() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let _ = stream.set_nodelay(true);
                    conns.spawn(handle_socket(stream, peer, shared.clone(), cancel.clone(), websocket));
                }
                Err(e) => warn!(%e, "accept failed"),
            },
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
    while conns.join_next().await.is_some() {}
}

async fn handle_socket(
    stream: TcpStream,
    peer: SocketAddr,
    shared: SharedRef,
    cancel: CancellationToken,
    websocket: bool,
) {
    if !websocket {
        let (sink, stream) = Framed::new(stream, frame_codec()).split();
        let stream = stream.map(|r| r.map(|b| b.freeze()));
        serve_connection(stream, sink, peer, shared, cancel).await;
        return;
    }
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!(%peer, %e, "websocket handshake failed");
            return;
        }
    };
    let (sink, stream) = ws.split();
    let sink = Box::pin(sink.with(|b: Bytes| async move {
        Ok::<_, tokio_tungstenite::tungstenite::Error>(Message::binary(b))
    }));
    let stream = stream.filter_map(|m| async move {
        match m {
            Ok(Message::Binary(b)) => Some(Ok(Bytes::from(b))),
            Ok(Message::Close(_)) => None,
            Ok(_) => None,
            Err(e) => Some(Err(io::Error::other(e))),
        }
    });
    serve_connection(Box::pin(stream), sink, peer, shared, cancel).await;
}

async fn serve_connection<S, K, E>(mut stream: S, mut sink: K, peer: SocketAddr, shared: SharedRef, cancel: CancellationToken)
where
    S: Stream<Item = io::Result<Bytes>> + Unpin,
    K: Sink<Bytes, Error = E> + Unpin + Send + 'static,
    E: std::fmt::Display,
{
    let (tx, mut rx) = mpsc::unbounded_channel::<Bytes>();
    let conn = {
        let mut st = shared.lock().expect("relay lock");
        let conn = st.relay.open_connection();
        st.writers.insert(conn, tx);
        conn
    };
    debug!(%peer, %conn, "connection opened");

    let writer = tokio::spawn(async move {
        while let Some(frame) = rx.recv().await {
            if let Err(e) = sink.send(frame).await {
                debug!(%e, "write failed");
                break;
            }
        }
        let _ = sink.close().await;
    });

    loop {
        tokio::select! {
            _ = cancel.cancelled() => break,
            item = stream.next() => match item {
                Some(Ok(frame)) => {
                    let mut st = shared.lock().expect("relay lock");
                    let outcome = st.relay.handle_bytes(conn, frame);
                    for (to, bytes) in outcome.outbound {
                        if let Some(w) = st.writers.get(&to) {
                            let _ = w.send(bytes);
                        }
                    }
                    if let Some(reason) = outcome.close {
                        info!(%peer, %conn, %reason, "closing connection");
                        break;
                    }
                }
                Some(Err(e)) => {
                    debug!(%peer, %conn, %e, "read failed");
                    break;
                }
                None => break,
            }
        }
    }

    {
        let mut st = shared.lock().expect("relay lock");
        st.relay.on_disconnect(conn);
        // dropping the sender lets the writer flush what is queued, then stop
        st.writers.remove(&conn);
    }
    let mut writer = writer;
    if tokio::time::timeout(WRITER_GRACE, &mut writer).await.is_err() {
        writer.abort();
    }
    debug!(%peer, %conn, "connection closed");
}
