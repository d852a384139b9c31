use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_util::codec::{Framed, LengthDelimitedCodec};

use fleetlink::client::{ClientConfig, TopicPublishSpec, TopicSubscribeSpec};
use fleetlink::runtime::{connect_client, frame_codec, start_server, ClientOptions, DataSink, RuntimeError, ServerHandle};
use fleetlink::server::{AuthRule, Op, PrincipalConfig, ServerConfig};
use fleetlink::wire::{decode_envelope, HelloBody, Kind, MessageEnvelope, SubscriptionAction, SubscriptionBody};

const WAIT: Duration = Duration::from_secs(3);

fn config(listen: &str) -> ServerConfig {
    ServerConfig {
        listen: listen.into(),
        ws_listen: Some("127.0.0.1:0".into()),
        principals: vec![
            PrincipalConfig {
                identity: "r1".into(),
                secret: "r1-secret".into(),
                rules: vec![AuthRule::new("/r1/.*", Op::Send)],
            },
            PrincipalConfig {
                identity: "ops".into(),
                secret: "ops-secret".into(),
                rules: vec![AuthRule::new(".*", Op::Receive)],
            },
        ],
    }
}

async fn server() -> ServerHandle {
    start_server(&config("127.0.0.1:0")).await.unwrap()
}

struct Raw(Framed<TcpStream, LengthDelimitedCodec>);

impl Raw {
    async fn connect(s: &ServerHandle) -> Self {
        Raw(Framed::new(TcpStream::connect(s.local_addr).await.unwrap(), frame_codec()))
    }

    async fn send(&mut self, e: &MessageEnvelope) -> Bytes {
        let bytes = Bytes::from(e.encode().unwrap());
        self.0.send(bytes.clone()).await.unwrap();
        bytes
    }

    async fn hello(&mut self, identity: &str, secret: &str) {
        self.send(&MessageEnvelope::hello(&HelloBody::new(identity, secret).unwrap(), 1)).await;
    }

    async fn subscribe(&mut self, regex: &str) {
        let body = SubscriptionBody {
            action: SubscriptionAction::Subscribe,
            topic_regex: regex.into(),
        };
        self.send(&MessageEnvelope::subscription(&body, 1)).await;
    }

    async fn recv(&mut self) -> Option<Bytes> {
        match timeout(WAIT, self.0.next()).await.expect("timed out waiting for a frame") {
            Some(Ok(b)) => Some(b.freeze()),
            _ => None,
        }
    }

    /// Skips PONGs until a DATA frame arrives.
    async fn recv_data(&mut self) -> Bytes {
        loop {
            let b = self.recv().await.expect("connection closed");
            if decode_envelope(&b).unwrap().kind == Kind::Data {
                return b;
            }
        }
    }

    async fn pong(&mut self, seq: u64) -> u64 {
        self.send(&MessageEnvelope::ping(seq, 2)).await;
        loop {
            let e = decode_envelope(&self.recv().await.expect("connection closed")).unwrap();
            if e.kind == Kind::Pong {
                return e.seq;
            }
        }
    }

    async fn assert_closed(&mut self) {
        while let Some(b) = self.recv().await {
            let kind = decode_envelope(&b).unwrap().kind;
            assert_ne!(kind, Kind::Data, "closed connection still relays");
        }
    }
}

async fn settle() {
    tokio::time::sleep(Duration::from_millis(50)).await;
}

#[tokio::test]
async fn relays_data_byte_for_byte_and_counts_pongs() {
    let s = server().await;
    let mut ops = Raw::connect(&s).await;
    ops.hello("ops", "ops-secret").await;
    ops.subscribe("/r1/.*").await;
    let mut r1 = Raw::connect(&s).await;
    r1.hello("r1", "r1-secret").await;
    settle().await;

    let payload: Vec<u8> = (0..=255).collect();
    let mut sent = Vec::new();
    for seq in 1..=3 {
        sent.push(r1.send(&MessageEnvelope::data("/r1/odom", "nav_msgs/Odometry", seq, 1_700_000_000_000_000 + seq, payload.clone())).await);
    }
    assert_eq!(r1.pong(3).await, 3);
    for want in &sent {
        assert_eq!(&ops.recv_data().await, want);
    }
    r1.send(&MessageEnvelope::data("/r1/odom", "T", 4, 0, vec![])).await;
    assert_eq!(r1.pong(4).await, 4);
    assert_eq!(ops.pong(0).await, 0, "a subscriber that sent nothing has received nothing");
    s.shutdown().await;
}

#[tokio::test]
async fn websocket_and_tcp_share_one_relay() {
    let s = server().await;
    let url = format!("ws://{}", s.ws_addr.unwrap());
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let hello = MessageEnvelope::hello(&HelloBody::new("ops", "ops-secret").unwrap(), 1);
    ws.send(Message::binary(hello.encode().unwrap())).await.unwrap();
    let sub = SubscriptionBody {
        action: SubscriptionAction::Subscribe,
        topic_regex: "/r1/scan".into(),
    };
    ws.send(Message::binary(MessageEnvelope::subscription(&sub, 1).encode().unwrap())).await.unwrap();

    let mut r1 = Raw::connect(&s).await;
    r1.hello("r1", "r1-secret").await;
    settle().await;
    let sent = r1.send(&MessageEnvelope::data("/r1/scan", "LaserScan", 1, 7, vec![9; 1000])).await;
    r1.send(&MessageEnvelope::data("/r1/odom", "Odometry", 2, 8, vec![1])).await;

    let got = timeout(WAIT, ws.next()).await.unwrap().unwrap().unwrap();
    assert_eq!(got.into_data(), sent.to_vec(), "one envelope per binary message, no prefix");

    ws.send(Message::binary(MessageEnvelope::ping(0, 1).encode().unwrap())).await.unwrap();
    let pong = timeout(WAIT, ws.next()).await.unwrap().unwrap().unwrap();
    let pong = decode_envelope(&pong.into_data()).unwrap();
    assert_eq!((pong.kind, pong.seq), (Kind::Pong, 0), "the /r1/odom frame was not matched");
    s.shutdown().await;
}

#[tokio::test]
async fn bad_credentials_and_unauthorized_frames_close_the_connection() {
    let s = server().await;

    let mut wrong = Raw::connect(&s).await;
    wrong.hello("r1", "nope").await;
    wrong.assert_closed().await;

    let mut unknown = Raw::connect(&s).await;
    unknown.hello("ghost", "x").await;
    unknown.assert_closed().await;

    let mut early = Raw::connect(&s).await;
    early.send(&MessageEnvelope::ping(0, 1)).await;
    early.assert_closed().await;

    let mut twice = Raw::connect(&s).await;
    twice.hello("r1", "r1-secret").await;
    twice.hello("r1", "r1-secret").await;
    twice.assert_closed().await;

    let mut ops = Raw::connect(&s).await;
    ops.hello("ops", "ops-secret").await;
    ops.subscribe(".*").await;
    let mut r1 = Raw::connect(&s).await;
    r1.hello("r1", "r1-secret").await;
    settle().await;
    r1.send(&MessageEnvelope::data("/ops/cmd", "T", 1, 0, vec![1])).await;
    r1.assert_closed().await;
    assert_eq!(ops.pong(0).await, 0);

    s.shutdown().await;
}

#[tokio::test]
async fn malformed_frames_are_dropped_and_counted() {
    let s = server().await;
    let mut c = Raw::connect(&s).await;
    c.0.send(Bytes::from_static(b"not an envelope")).await.unwrap();
    c.hello("ops", "ops-secret").await;
    c.0.send(Bytes::from_static(b"RF\x01")).await.unwrap();
    assert_eq!(c.pong(0).await, 0);
    assert_eq!(s.stats().malformed, 2);
    s.shutdown().await;
}

#[tokio::test]
async fn clients_publish_and_subscribe_through_the_relay() {
    let s = server().await;
    let addr = s.local_addr.to_string();
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
    let sink: DataSink = Arc::new(move |e| {
        let _ = tx.send(e);
    });
    let mut ops = ClientConfig::new("ops", "ops", "ops-secret", 1);
    ops.server_addr = addr.clone();
    ops.remote_topics = vec![TopicSubscribeSpec {
        topic: "/r1/status".into(),
        msg_type: "Status".into(),
    }];
    let subscriber = connect_client(ops, sink, ClientOptions::default()).await.unwrap();

    let mut r1 = ClientConfig::new("r1", "r1", "r1-secret", 2);
    r1.server_addr = addr;
    r1.local_topics = vec![TopicPublishSpec::new("/status", "Status", 1.0, 1000.0, true)];
    let publisher = connect_client(r1, Arc::new(|_| {}), ClientOptions::default()).await.unwrap();
    settle().await;

    for i in 0..50u8 {
        publisher.ingest(vec![i; 100], "/status");
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    assert!(publisher.drain(WAIT).await);
    let mut got = Vec::new();
    while got.len() < 50 {
        let e = timeout(WAIT, rx.recv()).await.unwrap().unwrap();
        assert_eq!(e.topic, "/r1/status");
        got.push(e.payload[0]);
    }
    assert_eq!(got, (0..50).collect::<Vec<u8>>(), "no_drop topic arrives complete and in order");
    let stats = publisher.stats();
    assert_eq!(stats.data_sent, 50);
    assert!(stats.max_in_flight_at_send < 2);
    publisher.shutdown().await.unwrap();
    subscriber.shutdown().await.unwrap();
    s.shutdown().await;
}

#[tokio::test]
async fn client_reconnects_after_relay_restart() {
    let s = server().await;
    let addr = s.local_addr.to_string();
    let mut r1 = ClientConfig::new("r1", "r1", "r1-secret", 1);
    r1.server_addr = addr.clone();
    r1.local_topics = vec![TopicPublishSpec::new("/status", "Status", 1.0, 1000.0, true)];
    let options = ClientOptions {
        connect_attempts: 50,
        retry_delay: Duration::from_millis(50),
        reconnect: true,
    };
    let publisher = connect_client(r1, Arc::new(|_| {}), options).await.unwrap();
    settle().await;
    s.shutdown().await;

    let s = start_server(&config(&addr)).await.unwrap();
    let mut ops = Raw::connect(&s).await;
    ops.hello("ops", "ops-secret").await;
    ops.subscribe("/r1/status").await;

    let deadline = tokio::time::Instant::now() + WAIT;
    while !(publisher.is_connected() && s.connection_count() == 2) {
        assert!(tokio::time::Instant::now() < deadline, "client did not reconnect");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    publisher.ingest(vec![42], "/status");
    let e = decode_envelope(&ops.recv_data().await).unwrap();
    assert_eq!((e.topic.as_str(), &e.payload[..]), ("/r1/status", &[42u8][..]));
    assert_eq!(e.seq, 1, "DATA seq restarts on a new connection");
    publisher.shutdown().await.unwrap();
    s.shutdown().await;
}

#[tokio::test]
async fn unreachable_relay_fails_after_bounded_attempts() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = ClientConfig::new("r1", "r1", "x", 1);
    cfg.server_addr = format!("127.0.0.1:{port}");
    let options = ClientOptions {
        connect_attempts: 3,
        retry_delay: Duration::from_millis(10),
        reconnect: false,
    };
    match connect_client(cfg, Arc::new(|_| {}), options).await {
        Err(RuntimeError::Connect { attempts, .. }) => assert_eq!(attempts, 3),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("connected to a closed port"),
    }
}
