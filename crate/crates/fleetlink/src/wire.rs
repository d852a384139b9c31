//! Binary envelope exchanged by every party, plus a JSON baseline codec.
//!
//! ## Wire Format
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       2     magic  0x52 0x46 ("RF")
//! 2       1     version 0x01
//! 3       1     kind (0 DATA, 1 SUBSCRIPTION, 2 PING, 3 PONG, 4 HELLO)
//! 4       8     seq
//! 12      8     timestamp_us
//! 20      2     topic length
//! 22      2     msg_type length
//! 24      4     payload length
//! 28      ..    topic bytes, msg_type bytes, payload bytes
//! ```
//!
//! SUBSCRIPTION payload: `action(1) || topic_regex(utf-8, rest)`.
//! HELLO payload: `identity_len(u16) || identity || secret(utf-8, rest)`.
//!
//! On stream transports each envelope is preceded by a 4-byte little-endian
//! frame length (see [`crate::runtime`]).

use bytes::Bytes;
use serde::Serialize;
use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x52, 0x46];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 28;

pub const MAX_STR_LEN: usize = u16::MAX as usize;
pub const MAX_PAYLOAD_LEN: usize = u32::MAX as usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("{field} is {len} bytes, limit is {limit}")]
    FieldTooLong {
        field: &'static str,
        len: usize,
        limit: usize,
    },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown envelope kind {0}")]
    UnknownKind(u8),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after declared frame")]
    TrailingBytes(usize),
    #[error("{0} is not valid utf-8")]
    BadUtf8(&'static str),
    #[error("unknown subscription action {0}")]
    BadAction(u8),
    #[error("expected a {expected:?} envelope, got {got:?}")]
    WrongKind { expected: Kind, got: Kind },
    #[error("hello identity and secret must both be non-empty")]
    EmptyCredential,
    #[error("json baseline only encodes DATA envelopes, got {0:?}")]
    UnsupportedKind(Kind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Kind {
    Data = 0,
    Subscription = 1,
    Ping = 2,
    Pong = 3,
    Hello = 4,
}

impl Kind {
    pub const ALL: [Kind; 5] = [
        Kind::Data,
        Kind::Subscription,
        Kind::Ping,
        Kind::Pong,
        Kind::Hello,
    ];
}

impl TryFrom<u8> for Kind {
    type Error = WireError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Kind::ALL
            .get(value as usize)
            .copied()
            .ok_or(WireError::UnknownKind(value))
    }
}

/// The single unit of exchange on every link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageEnvelope {
    pub kind: Kind,
    /// DATA: per-connection send counter. PING/PONG: cumulative DATA count.
    pub seq: u64,
    pub timestamp_us: u64,
    pub topic: String,
    pub msg_type: String,
    pub payload: Bytes,
}

impl MessageEnvelope {
    pub fn data(
        topic: impl Into<String>,
        msg_type: impl Into<String>,
        seq: u64,
        timestamp_us: u64,
        payload: impl Into<Bytes>,
    ) -> Self {
        Self {
            kind: Kind::Data,
            seq,
            timestamp_us,
            topic: topic.into(),
            msg_type: msg_type.into(),
            payload: payload.into(),
        }
    }

    pub fn ping(seq: u64, timestamp_us: u64) -> Self {
        Self::bare(Kind::Ping, seq, timestamp_us)
    }

    pub fn pong(seq: u64, timestamp_us: u64) -> Self {
        Self::bare(Kind::Pong, seq, timestamp_us)
    }

    pub fn subscription(body: &SubscriptionBody, timestamp_us: u64) -> Self {
        Self {
            payload: body.encode(),
            ..Self::bare(Kind::Subscription, 0, timestamp_us)
        }
    }

    pub fn hello(body: &HelloBody, timestamp_us: u64) -> Self {
        Self {
            payload: body.encode(),
            ..Self::bare(Kind::Hello, 0, timestamp_us)
        }
    }

    fn bare(kind: Kind, seq: u64, timestamp_us: u64) -> Self {
        Self {
            kind,
            seq,
            timestamp_us,
            topic: String::new(),
            msg_type: String::new(),
            payload: Bytes::new(),
        }
    }

    /// Size of the binary encoding, without encoding.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.topic.len() + self.msg_type.len() + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        encode_envelope(self)
    }

    pub fn subscription_body(&self) -> Result<SubscriptionBody, WireError> {
        self.expect_kind(Kind::Subscription)?;
        SubscriptionBody::decode(&self.payload)
    }

    pub fn hello_body(&self) -> Result<HelloBody, WireError> {
        self.expect_kind(Kind::Hello)?;
        HelloBody::decode(&self.payload)
    }

    fn expect_kind(&self, expected: Kind) -> Result<(), WireError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(WireError::WrongKind {
                expected,
                got: self.kind,
            })
        }
    }
}

fn check_len(field: &'static str, len: usize, limit: usize) -> Result<(), WireError> {
    if len > limit {
        Err(WireError::FieldTooLong { field, len, limit })
    } else {
        Ok(())
    }
}

pub fn encode_envelope(e: &MessageEnvelope) -> Result<Vec<u8>, WireError> {
    check_len("topic", e.topic.len(), MAX_STR_LEN)?;
    check_len("msg_type", e.msg_type.len(), MAX_STR_LEN)?;
    check_len("payload", e.payload.len(), MAX_PAYLOAD_LEN)?;

    let mut buf = Vec::with_capacity(e.encoded_len());
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.push(e.kind as u8);
    buf.extend_from_slice(&e.seq.to_le_bytes());
    buf.extend_from_slice(&e.timestamp_us.to_le_bytes());
    buf.extend_from_slice(&(e.topic.len() as u16).to_le_bytes());
    buf.extend_from_slice(&(e.msg_type.len() as u16).to_le_bytes());
    buf.extend_from_slice(&(e.payload.len() as u32).to_le_bytes());
    buf.extend_from_slice(e.topic.as_bytes());
    buf.extend_from_slice(e.msg_type.as_bytes());
    buf.extend_from_slice(&e.payload);
    Ok(buf)
}

pub fn decode_envelope(b: &[u8]) -> Result<MessageEnvelope, WireError> {
    if b.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            have: b.len(),
        });
    }
    if b[0..2] != MAGIC {
        return Err(WireError::BadMagic([b[0], b[1]]));
    }
    if b[2] != VERSION {
        return Err(WireError::BadVersion(b[2]));
    }
    let kind = Kind::try_from(b[3])?;
    let seq = u64::from_le_bytes(b[4..12].try_into().expect("8 bytes"));
    let timestamp_us = u64::from_le_bytes(b[12..20].try_into().expect("8 bytes"));
    let topic_len = u16::from_le_bytes([b[20], b[21]]) as usize;
    let type_len = u16::from_le_bytes([b[22], b[23]]) as usize;
    let payload_len = u32::from_le_bytes(b[24..28].try_into().expect("4 bytes")) as usize;

    let total = HEADER_LEN + topic_len + type_len + payload_len;
    if b.len() < total {
        return Err(WireError::Truncated {
            needed: total,
            have: b.len(),
        });
    }
    if b.len() > total {
        return Err(WireError::TrailingBytes(b.len() - total));
    }

    let topic_end = HEADER_LEN + topic_len;
    let type_end = topic_end + type_len;
    let topic = std::str::from_utf8(&b[HEADER_LEN..topic_end])
        .map_err(|_| WireError::BadUtf8("topic"))?
        .to_owned();
    let msg_type = std::str::from_utf8(&b[topic_end..type_end])
        .map_err(|_| WireError::BadUtf8("msg_type"))?
        .to_owned();

    Ok(MessageEnvelope {
        kind,
        seq,
        timestamp_us,
        topic,
        msg_type,
        payload: Bytes::copy_from_slice(&b[type_end..]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SubscriptionAction {
    Subscribe = 0,
    Unsubscribe = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriptionBody {
    pub action: SubscriptionAction,
    pub topic_regex: String,
}

impl SubscriptionBody {
    pub fn encode(&self) -> Bytes {
        let mut buf = Vec::with_capacity(1 + self.topic_regex.len());
        buf.push(self.action as u8);
        buf.extend_from_slice(self.topic_regex.as_bytes());
        buf.into()
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let (&action, rest) = b.split_first().ok_or(WireError::Truncated { needed: 1, have: 0 })?;
        let action = match action {
            0 => SubscriptionAction::Subscribe,
            1 => SubscriptionAction::Unsubscribe,
            other => return Err(WireError::BadAction(other)),
        };
        let topic_regex = std::str::from_utf8(rest)
            .map_err(|_| WireError::BadUtf8("topic_regex"))?
            .to_owned();
        Ok(Self {
            action,
            topic_regex,
        })
    }
}

/// Shared-secret credential presented once per connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelloBody {
    pub identity: String,
    pub secret: String,
}

impl HelloBody {
    pub fn new(identity: impl Into<String>, secret: impl Into<String>) -> Result<Self, WireError> {
        let body = Self {
            identity: identity.into(),
            secret: secret.into(),
        };
        if body.identity.is_empty() || body.secret.is_empty() {
            return Err(WireError::EmptyCredential);
        }
        check_len("identity", body.identity.len(), MAX_STR_LEN)?;
        Ok(body)
    }

    pub fn encode(&self) -> Bytes {
        let mut buf = Vec::with_capacity(2 + self.identity.len() + self.secret.len());
        buf.extend_from_slice(&(self.identity.len() as u16).to_le_bytes());
        buf.extend_from_slice(self.identity.as_bytes());
        buf.extend_from_slice(self.secret.as_bytes());
        buf.into()
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        if b.len() < 2 {
            return Err(WireError::Truncated {
                needed: 2,
                have: b.len(),
            });
        }
        let id_len = u16::from_le_bytes([b[0], b[1]]) as usize;
        if b.len() < 2 + id_len {
            return Err(WireError::Truncated {
                needed: 2 + id_len,
                have: b.len(),
            });
        }
        let identity =
            std::str::from_utf8(&b[2..2 + id_len]).map_err(|_| WireError::BadUtf8("identity"))?;
        let secret =
            std::str::from_utf8(&b[2 + id_len..]).map_err(|_| WireError::BadUtf8("secret"))?;
        Self::new(identity, secret)
    }
}

#[derive(Serialize)]
struct JsonBaseline<'a> {
    op: &'static str,
    topic: &'a str,
    #[serde(rename = "type")]
    msg_type: &'a str,
    seq: u64,
    timestamp_us: u64,
    msg: JsonMsg<'a>,
}

#[derive(Serialize)]
struct JsonMsg<'a> {
    data: &'a [u8],
}

/// Text encoding with the payload expanded to a decimal integer array, the
/// way JSON bridges serialize byte arrays. Only DATA envelopes are accepted.
pub fn encode_json_baseline(e: &MessageEnvelope) -> Result<Vec<u8>, WireError> {
    if e.kind != Kind::Data {
        return Err(WireError::UnsupportedKind(e.kind));
    }
    let doc = JsonBaseline {
        op: "publish",
        topic: &e.topic,
        msg_type: &e.msg_type,
        seq: e.seq,
        timestamp_us: e.timestamp_us,
        msg: JsonMsg { data: &e.payload },
    };
    Ok(serde_json::to_vec(&doc).expect("json serialization of plain data cannot fail"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_layout_is_exact() {
        let bytes = MessageEnvelope::ping(7, 0).encode().unwrap();
        let mut expected = vec![0x52, 0x46, 0x01, 0x02, 0x07, 0, 0, 0, 0, 0, 0, 0];
        expected.extend_from_slice(&[0u8; 16]);
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn data_length_is_header_plus_fields() {
        let e = MessageEnvelope::data("/r1/odom", "Odometry", 1, 5, vec![0xAB; 100]);
        assert_eq!(e.encode().unwrap().len(), 144);
        assert_eq!(e.encoded_len(), 144);
    }

    #[test]
    fn laser_scan_sized_payload() {
        let e = MessageEnvelope::data("/r1/scan", "LaserScan", 1, 0, vec![0u8; 7260]);
        assert_eq!(e.encode().unwrap().len(), 7305);
    }

    #[test]
    fn short_input_is_truncated() {
        assert!(matches!(
            decode_envelope(&[0u8; 27]),
            Err(WireError::Truncated { needed: 28, have: 27 })
        ));
    }

    #[test]
    fn payload_shorter_than_declared_is_truncated() {
        let e = MessageEnvelope::data("", "", 0, 0, vec![1u8; 10]);
        let mut b = e.encode().unwrap();
        b.pop();
        assert!(matches!(decode_envelope(&b), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn extra_bytes_are_rejected() {
        let mut b = MessageEnvelope::ping(1, 1).encode().unwrap();
        b.push(0);
        assert_eq!(decode_envelope(&b), Err(WireError::TrailingBytes(1)));
    }

    #[test]
    fn header_errors() {
        let good = MessageEnvelope::ping(1, 1).encode().unwrap();

        let mut b = good.clone();
        b[0] = 0;
        assert!(matches!(decode_envelope(&b), Err(WireError::BadMagic(_))));

        let mut b = good.clone();
        b[2] = 2;
        assert_eq!(decode_envelope(&b), Err(WireError::BadVersion(2)));

        let mut b = good;
        b[3] = 9;
        assert_eq!(decode_envelope(&b), Err(WireError::UnknownKind(9)));
    }

    #[test]
    fn invalid_utf8_topic() {
        let mut b = MessageEnvelope::data("ab", "", 0, 0, Bytes::new())
            .encode()
            .unwrap();
        b[28] = 0xFF;
        assert_eq!(decode_envelope(&b), Err(WireError::BadUtf8("topic")));
    }

    #[test]
    fn oversized_topic_rejected() {
        let e = MessageEnvelope::data("x".repeat(MAX_STR_LEN + 1), "", 0, 0, Bytes::new());
        assert!(matches!(
            e.encode(),
            Err(WireError::FieldTooLong { field: "topic", .. })
        ));
    }

    #[test]
    fn subscription_and_hello_bodies() {
        let sub = SubscriptionBody {
            action: SubscriptionAction::Unsubscribe,
            topic_regex: "/r1/.*".into(),
        };
        let env = MessageEnvelope::subscription(&sub, 3);
        let back = decode_envelope(&env.encode().unwrap()).unwrap();
        assert_eq!(back.subscription_body().unwrap(), sub);
        assert!(back.topic.is_empty() && back.msg_type.is_empty());

        let hello = HelloBody::new("r1", "s3cret").unwrap();
        let env = MessageEnvelope::hello(&hello, 0);
        assert_eq!(env.hello_body().unwrap(), hello);
        assert!(env.subscription_body().is_err());

        assert_eq!(HelloBody::new("", "x"), Err(WireError::EmptyCredential));
        assert_eq!(SubscriptionBody::decode(&[7]), Err(WireError::BadAction(7)));
    }

    #[test]
    fn json_baseline_shapes() {
        let e = MessageEnvelope::data("/t", "T", 0, 0, vec![0u8]);
        let text = String::from_utf8(encode_json_baseline(&e).unwrap()).unwrap();
        assert!(text.contains("[0]"), "{text}");

        let e = MessageEnvelope::data("/t", "T", 0, 0, Bytes::new());
        let v: serde_json::Value = serde_json::from_slice(&encode_json_baseline(&e).unwrap()).unwrap();
        assert_eq!(v["msg"]["data"], serde_json::json!([]));

        assert_eq!(
            encode_json_baseline(&MessageEnvelope::ping(0, 0)),
            Err(WireError::UnsupportedKind(Kind::Ping))
        );
    }
}
