//! Tokio transports around the sans-IO [`Relay`](crate::server::Relay) and
//! [`Client`](crate::client::Client).
//!
//! Stream connections carry one envelope per frame, each preceded by its
//! length as a 4-byte little-endian integer. The optional WebSocket
//! listener carries one envelope per binary message.

mod client;
mod server;

use std::time::{SystemTime, UNIX_EPOCH};

use tokio_util::codec::LengthDelimitedCodec;

pub use client::{connect_client, ClientHandle, ClientOptions, DataSink, RuntimeError};
pub use server::{start_server, ServerHandle};

/// Largest frame accepted on a stream connection.
pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;

/// Codec for the 4-byte little-endian length prefix.
pub fn frame_codec() -> LengthDelimitedCodec {
    LengthDelimitedCodec::builder()
        .little_endian()
        .length_field_length(4)
        .max_frame_length(MAX_FRAME_LEN)
        .new_codec()
}

/// Microseconds since the Unix epoch.
pub fn unix_now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as u64)
}

#[cfg(test)]
mod tests {
    use bytes::{Bytes, BytesMut};
    use tokio_util::codec::{Decoder, Encoder};

    use super::*;

    #[test]
    fn length_prefix_is_little_endian() {
        let mut buf = BytesMut::new();
        frame_codec()
            .encode(Bytes::from_static(&[0xaa; 3]), &mut buf)
            .unwrap();
        assert_eq!(&buf[..], &[3, 0, 0, 0, 0xaa, 0xaa, 0xaa]);
        let frame = frame_codec().decode(&mut buf).unwrap().unwrap();
        assert_eq!(&frame[..], &[0xaa; 3]);
    }
}
