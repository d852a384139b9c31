//! Golden wire vectors shared with other codec implementations.
//!
//! The rendered file (`docs/wire-vectors.hex`) is a list of blocks:
//!
//! ```text
//! [data_basic]
//! kind = DATA
//! seq = 1
//! timestamp_us = 1700000000000000
//! topic = 2f72312f6f646f6d
//! msg_type = 6e61765f6d7367732f4f646f6d65747279
//! payload = deadbeef
//! envelope = 524601000100000000000000...
//! ```
//!
//! `topic`, `msg_type`, `payload` and `envelope` are lowercase hex. Blocks
//! carrying `error` instead of fields hold bytes the decoder must reject.
//! Lines starting with `#` are comments.

use std::fmt::Write;

use crate::wire::{
    encode_envelope, HelloBody, Kind, MessageEnvelope, SubscriptionAction, SubscriptionBody, WireError,
};

/// A vector the decoder must accept.
pub struct ValidVector {
    pub name: &'static str,
    pub envelope: MessageEnvelope,
}

/// Bytes the decoder must reject with the given error code.
pub struct InvalidVector {
    pub name: &'static str,
    pub bytes: Vec<u8>,
    pub error: &'static str,
}

pub fn kind_name(k: Kind) -> &'static str {
    match k {
        Kind::Data => "DATA",
        Kind::Subscription => "SUBSCRIPTION",
        Kind::Ping => "PING",
        Kind::Pong => "PONG",
        Kind::Hello => "HELLO",
    }
}

/// Stable short code for a decode error.
pub fn error_code(e: &WireError) -> &'static str {
    match e {
        WireError::Truncated { .. } => "truncated",
        WireError::BadMagic(_) => "bad_magic",
        WireError::BadVersion(_) => "bad_version",
        WireError::UnknownKind(_) => "unknown_kind",
        WireError::TrailingBytes(_) => "trailing_bytes",
        WireError::BadUtf8(_) => "bad_utf8",
        WireError::BadAction(_) => "bad_action",
        WireError::FieldTooLong { .. } => "field_too_long",
        WireError::WrongKind { .. } => "wrong_kind",
        WireError::EmptyCredential => "empty_credential",
        WireError::UnsupportedKind(_) => "unsupported_kind",
    }
}

const TS: u64 = 1_700_000_000_000_000;

pub fn valid_vectors() -> Vec<ValidVector> {
    let sub = |action, re: &str| MessageEnvelope::subscription(&SubscriptionBody { action, topic_regex: re.into() }, TS + 2);
    let hello = HelloBody::new("r1", "s3cret").expect("non-empty");
    let v = |name, envelope| ValidVector { name, envelope };
    vec![
        v(
            "data_basic",
            MessageEnvelope::data("/r1/odom", "nav_msgs/Odometry", 1, TS, vec![0xde, 0xad, 0xbe, 0xef]),
        ),
        v("data_empty_payload", MessageEnvelope::data("/r1/heartbeat", "std_msgs/Empty", 2, TS + 1, Vec::new())),
        v("data_empty_strings", MessageEnvelope::data("", "", 0, 0, vec![0x00])),
        v(
            "data_all_byte_values",
            MessageEnvelope::data("/r1/blob", "bench/Blob", 3, TS + 3, (0..=255u8).collect::<Vec<_>>()),
        ),
        v(
            "data_utf8_topic",
            MessageEnvelope::data("/r1/kamera/höhe", "sensor_msgs/Image", 4, TS + 4, b"\x01\x02".to_vec()),
        ),
        v("data_max_counters", MessageEnvelope::data("/r1/x", "t", u64::MAX, u64::MAX, vec![0xff])),
        v("subscription_subscribe", sub(SubscriptionAction::Subscribe, "/r1/odom")),
        v("subscription_unsubscribe_regex", sub(SubscriptionAction::Unsubscribe, "/r[0-9]+/(odom|scan)")),
        v("ping", MessageEnvelope::ping(7, TS + 5)),
        v("pong", MessageEnvelope::pong(7, TS + 6)),
        v("hello", MessageEnvelope::hello(&hello, TS + 7)),
    ]
}

pub fn invalid_vectors() -> Vec<InvalidVector> {
    let good = encode_envelope(&MessageEnvelope::data("/a", "t", 1, 2, vec![9])).expect("small envelope");
    let mutate = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = good.clone();
        f(&mut b);
        b
    };
    let v = |name, bytes, error| InvalidVector { name, bytes, error };
    vec![
        v("short_header", good[..27].to_vec(), "truncated"),
        v("bad_magic", mutate(&|b| b[0] = 0x00), "bad_magic"),
        v("bad_version", mutate(&|b| b[2] = 0x02), "bad_version"),
        v("unknown_kind", mutate(&|b| b[3] = 0x05), "unknown_kind"),
        v("short_body", good[..good.len() - 1].to_vec(), "truncated"),
        v("trailing_byte", mutate(&|b| b.push(0)), "trailing_bytes"),
        v("topic_not_utf8", mutate(&|b| b[28] = 0xff), "bad_utf8"),
    ]
}

fn hex(b: &[u8]) -> String {
    b.iter().fold(String::with_capacity(b.len() * 2), |mut s, x| {
        let _ = write!(s, "{x:02x}");
        s
    })
}

/// Renders the vector file. The output is deterministic.
pub fn render_vector_file() -> String {
    let mut out = String::new();
    out.push_str("# fleetlink wire vectors, format 1\n");
    out.push_str("# Blocks of `key = value`. topic, msg_type, payload and envelope are hex.\n");
    out.push_str("# envelope excludes the 4-byte stream length prefix.\n");
    out.push_str("# Blocks with `error` must be rejected by the decoder.\n");
    for v in valid_vectors() {
        let e = &v.envelope;
        let bytes = encode_envelope(e).expect("vectors are encodable");
        let _ = write!(
            out,
            "\n[{}]\nkind = {}\nseq = {}\ntimestamp_us = {}\ntopic = {}\nmsg_type = {}\npayload = {}\nenvelope = {}\n",
            v.name,
            kind_name(e.kind),
            e.seq,
            e.timestamp_us,
            hex(e.topic.as_bytes()),
            hex(e.msg_type.as_bytes()),
            hex(&e.payload),
            hex(&bytes),
        );
    }
    for v in invalid_vectors() {
        let _ = write!(out, "\n[{}]\nerror = {}\nenvelope = {}\n", v.name, v.error, hex(&v.bytes));
    }
    out
}
