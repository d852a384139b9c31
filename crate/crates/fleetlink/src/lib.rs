//! Fleet messaging: a compact binary envelope, a central relay with topic
//! authorization, a publishing client with rate limiting and backpressure
//! control, and a virtual-time harness that benchmarks all of it over
//! emulated links.

pub mod bench;
pub mod cli;
pub mod client;
pub mod config;
pub mod golden;
pub mod netsim;
pub mod pattern;
pub mod runtime;
pub mod server;
pub mod wire;
