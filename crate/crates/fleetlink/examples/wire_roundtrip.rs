//! Encodes envelopes, decodes them back and compares the binary size with
//! the JSON baseline for a few payload sizes.

use fleetlink::wire::{
    decode_envelope, encode_json_baseline, HelloBody, MessageEnvelope, SubscriptionAction, SubscriptionBody,
    HEADER_LEN,
};

fn main() -> Result<(), fleetlink::wire::WireError> {
    let now = 1_700_000_000_000_000;
    let hello = MessageEnvelope::hello(&HelloBody::new("r1", "s3cret")?, now);
    let sub = MessageEnvelope::subscription(
        &SubscriptionBody {
            action: SubscriptionAction::Subscribe,
            topic_regex: "/r2/odom".into(),
        },
        now,
    );
    for e in [&hello, &sub] {
        let bytes = e.encode()?;
        let back = decode_envelope(&bytes)?;
        assert_eq!(&back, e);
        println!("{:?}: {} bytes", e.kind, bytes.len());
    }
    println!("decoded hello body: {:?}", decode_envelope(&hello.encode()?)?.hello_body()?);

    println!("\n{:>10} {:>10} {:>12} {:>7}", "payload_B", "binary_B", "json_B", "ratio");
    for size in [0usize, 16, 1_000, 20_000, 100_000] {
        // pseudo-random bytes, like compressed sensor data
        let payload: Vec<u8> = (0..size).map(|i| (i as u32).wrapping_mul(2_654_435_761).to_be_bytes()[0]).collect();
        let e = MessageEnvelope::data("/r1/camera", "sensor_msgs/CompressedImage", 1, now, payload);
        let bin = e.encode()?;
        let json = encode_json_baseline(&e)?;
        assert_eq!(decode_envelope(&bin)?, e);
        println!(
            "{:>10} {:>10} {:>12} {:>7.2}",
            size,
            bin.len(),
            json.len(),
            json.len() as f64 / bin.len() as f64
        );
    }
    println!("\nfixed header: {HEADER_LEN} bytes");
    Ok(())
}
