//! Virtual-time benchmark harness.
//!
//! A scenario wires one producer, an optional relay and `consumer_count`
//! consumers over simulated links and replays a fixed publish schedule.
//! The producer uplink follows the scenario [`NetProfile`]; every other
//! link uses `consumer_profile`. Runs are deterministic: the same scenario
//! always yields the same records.

mod export;
mod metrics;
mod scenario;
mod sim;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::DEFAULT_SCHEDULER_TICK_MS;
use crate::netsim::NetProfile;
use crate::wire::MessageEnvelope;

pub use export::{export_csv, read_latency_csv, summary_row, write_latency_csv, write_summary_csv, SummaryRow};
pub use metrics::{compute_metrics, percentile, recovery_time, Metrics, MessageRecord};
pub use scenario::{RunSpec, ScenarioSuite};

/// Name of the producing client inside a scenario.
pub const PRODUCER_NAME: &str = "r1";
/// Bytes at the front of every generated payload: produce time and index.
pub const PAYLOAD_HEADER_LEN: usize = 16;
pub const METRICS_TOPIC: &str = "/bench/metrics";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid scenario {name:?}:\n  {}", .diagnostics.join("\n  "))]
    InvalidScenario {
        name: String,
        diagnostics: Vec<String>,
    },
    #[error("{path}: {message}")]
    ScenarioFile { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Backpressure plus the two-queue scheduler.
    Scheduled,
    /// Backpressure with every topic forced to no_drop.
    NoDropAll,
    /// Unbounded FIFO straight into the transport.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Relay,
    /// One uplink stream per consumer, no relay.
    PeerToPeer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Binary,
    Json,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Scheduled => "scheduled",
            Policy::NoDropAll => "no_drop_all",
            Policy::Naive => "naive",
        })
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Relay => "relay",
            Topology::PeerToPeer => "peer_to_peer",
        })
    }
}

fn default_msg_type() -> String {
    "bench/Blob".into()
}

fn default_priority() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublisherSpec {
    /// Local topic name; published as `/r1<topic>`.
    pub topic: String,
    #[serde(default = "default_msg_type")]
    pub msg_type: String,
    #[serde(default = "default_priority")]
    pub priority: f64,
    /// Client-side rate limit. Defaults to `publish_hz`.
    #[serde(default)]
    pub rate_hz: Option<f64>,
    #[serde(default)]
    pub no_drop: bool,
    pub payload_bytes: usize,
    pub publish_hz: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub start_s: f64,
}

impl PublisherSpec {
    pub fn new(topic: &str, payload_bytes: usize, publish_hz: f64, duration_s: f64) -> Self {
        Self {
            topic: topic.to_owned(),
            msg_type: default_msg_type(),
            priority: 1.0,
            rate_hz: None,
            no_drop: false,
            payload_bytes,
            publish_hz,
            duration_s,
            start_s: 0.0,
        }
    }

    pub fn with_priority(mut self, priority: f64) -> Self {
        self.priority = priority;
        self
    }

    pub fn message_count(&self) -> u64 {
        (self.duration_s * self.publish_hz - 1e-9).ceil().max(0.0) as u64
    }

    pub fn publish_time_us(&self, k: u64) -> u64 {
        ((self.start_s + k as f64 / self.publish_hz) * 1e6).round() as u64
    }

    fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub policy: Policy,
    pub topology: Topology,
    /// Defaults to JSON for a naive relay run and binary otherwise.
    pub encoding: Option<Encoding>,
    pub consumer_count: usize,
    pub backpressure_threshold: u64,
    pub scheduler_tick_ms: u64,
    /// Producer uplink.
    pub profile: NetProfile,
    /// Every other link. Defaults to 1 Gbit/s with the uplink's base delay.
    pub consumer_profile: Option<NetProfile>,
    pub publishers: Vec<PublisherSpec>,
    /// How long after the last publish the run may continue draining.
    pub drain_s: f64,
}

impl Scenario {
    pub fn new(name: &str, policy: Policy, profile: NetProfile, publishers: Vec<PublisherSpec>) -> Self {
        Self {
            name: name.to_owned(),
            policy,
            topology: Topology::Relay,
            encoding: None,
            consumer_count: 1,
            backpressure_threshold: 1,
            scheduler_tick_ms: DEFAULT_SCHEDULER_TICK_MS,
            profile,
            consumer_profile: None,
            publishers,
            drain_s: 300.0,
        }
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding.unwrap_or(match (self.policy, self.topology) {
            (Policy::Naive, Topology::Relay) => Encoding::Json,
            _ => Encoding::Binary,
        })
    }

    pub fn consumer_profile(&self) -> NetProfile {
        self.consumer_profile
            .clone()
            .unwrap_or_else(|| NetProfile::constant(1e9, self.profile.base_delay_ms))
    }

    pub fn publish_end_s(&self) -> f64 {
        self.publishers.iter().map(PublisherSpec::end_s).fold(0.0, f64::max)
    }

    pub fn outbound_topic(&self, local: &str) -> String {
        format!("/{PRODUCER_NAME}{local}")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let mut d = Vec::new();
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            d.push(format!("name {:?}: must be non-empty and usable as a file name", self.name));
        }
        if self.consumer_count < 1 {
            d.push("consumer_count: must be >= 1".into());
        }
        if self.backpressure_threshold < 1 {
            d.push("backpressure_threshold: must be >= 1".into());
        }
        if self.scheduler_tick_ms < 1 {
            d.push("scheduler_tick_ms: must be >= 1".into());
        }
        if !(self.drain_s >= 0.0 && self.drain_s.is_finite()) {
            d.push("drain_s: must be a finite number >= 0".into());
        }
        if let Err(e) = self.profile.validate() {
            d.push(format!("profile: {e}"));
        }
        if let Some(p) = &self.consumer_profile {
            if let Err(e) = p.validate() {
                d.push(format!("consumer_profile: {e}"));
            }
        }
        if self.encoding() == Encoding::Json && self.policy != Policy::Naive {
            d.push(format!("encoding: json is only available with the naive policy, not {}", self.policy));
        }
        if self.topology == Topology::PeerToPeer && self.policy != Policy::Naive {
            d.push(format!("topology: peer_to_peer requires the naive policy, not {}", self.policy));
        }
        if self.publishers.is_empty() {
            d.push("publishers: at least one publisher is required".into());
        }
        let mut seen = std::collections::HashSet::new();
        for (i, p) in self.publishers.iter().enumerate() {
            let at = format!("publishers[{i}]");
            if !p.topic.starts_with('/') {
                d.push(format!("{at}.topic {:?}: must start with '/'", p.topic));
            }
            if !seen.insert(&p.topic) {
                d.push(format!("{at}.topic {:?}: duplicate topic", p.topic));
            }
            if p.payload_bytes < PAYLOAD_HEADER_LEN {
                d.push(format!("{at}.payload_bytes: must be >= {PAYLOAD_HEADER_LEN}"));
            }
            if !(p.publish_hz > 0.0 && p.publish_hz.is_finite()) {
                d.push(format!("{at}.publish_hz: must be > 0"));
            }
            if !(p.duration_s > 0.0 && p.duration_s.is_finite()) {
                d.push(format!("{at}.duration_s: must be > 0"));
            }
            if !(p.start_s >= 0.0 && p.start_s.is_finite()) {
                d.push(format!("{at}.start_s: must be >= 0"));
            }
            if !(p.priority >= 0.0 && p.priority.is_finite()) {
                d.push(format!("{at}.priority: must be >= 0"));
            }
            if let Some(r) = p.rate_hz {
                if !(r > 0.0 && r.is_finite()) {
                    d.push(format!("{at}.rate_hz: must be > 0"));
                }
            }
        }
        if d.is_empty() {
            Ok(())
        } else {
            Err(BenchError::InvalidScenario {
                name: self.name.clone(),
                diagnostics: d,
            })
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCounts {
    /// Messages the producer generated.
    pub published: u64,
    /// Deliveries summed over consumers.
    pub delivered: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub name: String,
    pub policy: Policy,
    pub topology: Topology,
    pub consumer_count: usize,
    pub records: Vec<MessageRecord>,
    pub metrics: Metrics,
    /// Keyed by outbound topic name.
    pub topics: BTreeMap<String, TopicCounts>,
    /// Bytes accepted onto the producer uplink, framing included.
    pub producer_egress_bytes: u64,
    /// Producer-side counters; zero for the naive policy.
    pub client_stats: crate::client::ClientStats,
    /// Virtual time at which the run ended.
    pub end_us: u64,
    /// True when every queue and link had drained before the time limit.
    pub drained: bool,
}

impl ScenarioResult {
    pub fn published(&self) -> u64 {
        self.topics.values().map(|c| c.published).sum()
    }

    pub fn delivered(&self) -> u64 {
        self.topics.values().map(|c| c.delivered).sum()
    }

    /// Expected deliveries that never happened, over all consumers.
    pub fn drops(&self) -> u64 {
        (self.published() * self.consumer_count as u64).saturating_sub(self.delivered())
    }

    /// Records seen by one consumer, in receive order.
    pub fn consumer_records(&self, consumer: usize) -> impl Iterator<Item = &MessageRecord> {
        self.records.iter().filter(move |r| r.consumer == consumer)
    }

    /// The summary as a DATA envelope for a live metrics stream.
    pub fn metrics_envelope(&self, seq: u64, timestamp_us: u64) -> MessageEnvelope {
        let row = summary_row(self);
        let payload = serde_json::to_vec(&row).expect("summary rows are plain data");
        MessageEnvelope::data(METRICS_TOPIC, "bench/ScenarioSummary", seq, timestamp_us, payload)
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult, BenchError> {
    scenario.validate()?;
    Ok(sim::Simulation::new(scenario).run())
}

/// Same as [`run_scenario`] but paced against the wall clock, `speed`
/// virtual seconds per real second. Results are identical.
pub fn run_scenario_wall_clock(scenario: &Scenario, speed: f64) -> Result<ScenarioResult, BenchError> {
    scenario.validate()?;
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(BenchError::InvalidScenario {
            name: scenario.name.clone(),
            diagnostics: vec![format!("speed: must be > 0, got {speed}")],
        });
    }
    Ok(sim::Simulation::new(scenario).paced(speed).run())
}
