//! Starts the relay on loopback (TCP and WebSocket listeners), connects a
//! publisher and a subscriber over TCP, and relays a few messages.

use std::sync::Arc;
use std::time::Duration;

use fleetlink::client::{ClientConfig, TopicPublishSpec, TopicSubscribeSpec};
use fleetlink::runtime::{connect_client, start_server, unix_now_us, ClientOptions, DataSink};
use fleetlink::server::{AuthRule, Op, PrincipalConfig, ServerConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = start_server(&ServerConfig {
        listen: "127.0.0.1:0".into(),
        ws_listen: Some("127.0.0.1:0".into()),
        principals: vec![
            PrincipalConfig {
                identity: "r1".into(),
                secret: "a".into(),
                rules: vec![AuthRule::new("/r1/.*", Op::Send)],
            },
            PrincipalConfig {
                identity: "ops".into(),
                secret: "b".into(),
                rules: vec![AuthRule::new(".*", Op::Receive)],
            },
        ],
    })
    .await?;
    println!("relay on {} (ws {:?})", server.local_addr, server.ws_addr);
    let addr = server.local_addr.to_string();

    let mut ops = ClientConfig::new("ops", "ops", "b", 1);
    ops.server_addr = addr.clone();
    ops.remote_topics = vec![TopicSubscribeSpec {
        topic: "/r1/scan".into(),
        msg_type: "LaserScan".into(),
    }];
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
    let sink: DataSink = Arc::new(move |e| {
        let _ = tx.send((unix_now_us(), e));
    });
    let subscriber = connect_client(ops, sink, ClientOptions::default()).await?;

    let mut r1 = ClientConfig::new("r1", "r1", "a", 1);
    r1.server_addr = addr;
    r1.local_topics = vec![TopicPublishSpec::new("/scan", "LaserScan", 1.0, 20.0, false)];
    let publisher = connect_client(r1, Arc::new(|_| {}), ClientOptions::default()).await?;
    tokio::time::sleep(Duration::from_millis(100)).await;

    for i in 0..5u8 {
        publisher.ingest(vec![i; 64], "/scan");
        tokio::time::sleep(Duration::from_millis(60)).await;
    }
    publisher.drain(Duration::from_secs(2)).await;
    for _ in 0..5 {
        match tokio::time::timeout(Duration::from_secs(1), rx.recv()).await {
            Ok(Some((received_us, e))) => println!(
                "{} seq={} {} bytes, latency {} us",
                e.topic,
                e.seq,
                e.payload.len(),
                received_us.saturating_sub(e.timestamp_us)
            ),
            _ => break,
        }
    }
    println!("publisher {:?}", publisher.stats());
    println!("relay {:?}", server.stats());
    publisher.shutdown().await?;
    subscriber.shutdown().await?;
    server.shutdown().await;
    Ok(())
}
