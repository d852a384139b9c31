//! Drives the sans-IO client by hand: rate limiting, the latest-only fair
//! queue, the no-drop queue and stop-and-wait backpressure.

use fleetlink::client::{Client, ClientConfig, TopicPublishSpec};
use fleetlink::wire::{Kind, MessageEnvelope};

fn show(at_ms: u64, frames: &[MessageEnvelope]) {
    for f in frames {
        match f.kind {
            Kind::Data => println!("{at_ms:>5} ms  DATA {} seq={} payload={:?}", f.topic, f.seq, f.payload),
            k => println!("{at_ms:>5} ms  {k:?} seq={}", f.seq),
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ClientConfig::new("r1", "r1", "secret", 1);
    cfg.local_topics = vec![
        TopicPublishSpec::new("/camera", "Image", 1.0, 10.0, false),
        TopicPublishSpec::new("/alarm", "String", 4.0, 100.0, true),
    ];
    let ms = |t: u64| t * 1_000;
    let mut c = Client::new(cfg, 0)?;
    show(0, &c.on_connect(0)?);

    println!("{:?}", c.ingest_local_message(&b"frame-1"[..], "/camera", ms(100)));
    // 10 ms later is inside the 100 ms rate-limit interval
    println!("{:?}", c.ingest_local_message(&b"frame-2"[..], "/camera", ms(110)));
    println!("{:?}", c.ingest_local_message(&b"fire"[..], "/alarm", ms(110)));

    // n_T = 1: one DATA goes out, then a PING, then nothing until the PONG
    show(120, &c.run_scheduler(ms(120))?);
    println!("in flight: {}", c.in_flight());
    show(130, &c.run_scheduler(ms(130))?);

    // a newer camera frame replaces the queued one
    println!("{:?}", c.ingest_local_message(&b"frame-3"[..], "/camera", ms(250)));

    c.handle_pong(&MessageEnvelope::pong(1, ms(300)));
    println!("after pong, in flight: {}", c.in_flight());
    show(300, &c.run_scheduler(ms(300))?);
    c.handle_pong(&MessageEnvelope::pong(2, ms(400)));
    show(400, &c.run_scheduler(ms(400))?);
    println!("{:#?}", c.stats());
    Ok(())
}
