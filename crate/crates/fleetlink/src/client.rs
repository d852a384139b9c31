//! Publishing client: per-topic rate limiting and queuing on ingest, and a
//! scheduler that drains the queues only while the number of unacknowledged
//! messages stays under the backpressure threshold.
//!
//! [`Client`] is a pure state machine. It never touches a socket; callers
//! feed it local messages, incoming frames and the current time, and put
//! whatever envelopes it returns on the wire. The same type drives the tokio
//! runtime in [`crate::runtime`] and the virtual-time simulator in
//! [`crate::bench`].

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern::escape_literal;
use crate::wire::{
    HelloBody, Kind, MessageEnvelope, SubscriptionAction, SubscriptionBody, WireError,
};

pub const DEFAULT_NO_DROP_CAPACITY: usize = 4096;
pub const DEFAULT_SCHEDULER_TICK_MS: u64 = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("transport is closed")]
    TransportClosed,
    #[error("invalid client config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicPublishSpec {
    pub topic: String,
    pub msg_type: String,
    pub priority: f64,
    pub rate_hz: f64,
    #[serde(default)]
    pub no_drop: bool,
}

impl TopicPublishSpec {
    pub fn new(topic: &str, msg_type: &str, priority: f64, rate_hz: f64, no_drop: bool) -> Self {
        Self {
            topic: topic.to_owned(),
            msg_type: msg_type.to_owned(),
            priority,
            rate_hz,
            no_drop,
        }
    }

    /// Minimum spacing between accepted messages, in whole microseconds.
    pub fn min_interval_us(&self) -> u64 {
        (1e6 / self.rate_hz).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSubscribeSpec {
    pub topic: String,
    pub msg_type: String,
}

fn default_no_drop_capacity() -> usize {
    DEFAULT_NO_DROP_CAPACITY
}

fn default_tick_ms() -> u64 {
    DEFAULT_SCHEDULER_TICK_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub client_name: String,
    #[serde(default)]
    pub server_addr: String,
    pub identity: String,
    pub secret: String,
    pub backpressure_threshold: u64,
    #[serde(default = "default_no_drop_capacity")]
    pub no_drop_capacity: usize,
    #[serde(default = "default_tick_ms")]
    pub scheduler_tick_ms: u64,
    #[serde(default)]
    pub local_topics: Vec<TopicPublishSpec>,
    #[serde(default)]
    pub remote_topics: Vec<TopicSubscribeSpec>,
}

impl ClientConfig {
    pub fn new(client_name: &str, identity: &str, secret: &str, backpressure_threshold: u64) -> Self {
        Self {
            client_name: client_name.to_owned(),
            server_addr: String::new(),
            identity: identity.to_owned(),
            secret: secret.to_owned(),
            backpressure_threshold,
            no_drop_capacity: DEFAULT_NO_DROP_CAPACITY,
            scheduler_tick_ms: DEFAULT_SCHEDULER_TICK_MS,
            local_topics: Vec::new(),
            remote_topics: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |msg: String| Err(ClientError::InvalidConfig(msg));
        if self.client_name.is_empty() || self.client_name.contains('/') {
            return bad(format!(
                "client_name {:?} must be non-empty and contain no '/'",
                self.client_name
            ));
        }
        if self.backpressure_threshold < 1 {
            return bad("backpressure_threshold must be >= 1".into());
        }
        if self.no_drop_capacity < 1 {
            return bad("no_drop_capacity must be >= 1".into());
        }
        if self.scheduler_tick_ms < 1 {
            return bad("scheduler_tick_ms must be >= 1".into());
        }
        HelloBody::new(self.identity.as_str(), self.secret.as_str())?;
        let mut seen = HashSet::new();
        for t in &self.local_topics {
            if !t.topic.starts_with('/') {
                return bad(format!("local topic {:?} must start with '/'", t.topic));
            }
            if !seen.insert(t.topic.as_str()) {
                return bad(format!("local topic {:?} is listed twice", t.topic));
            }
            if !(t.rate_hz > 0.0 && t.rate_hz.is_finite()) {
                return bad(format!("local topic {:?}: rate_hz must be > 0", t.topic));
            }
            if !(t.priority >= 0.0 && t.priority.is_finite()) {
                return bad(format!("local topic {:?}: priority must be >= 0", t.topic));
            }
        }
        Ok(())
    }

    /// Name a local topic is published under on the server.
    pub fn outbound_topic(&self, local_topic: &str) -> String {
        format!("/{}{}", self.client_name, local_topic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Enqueued,
    Replaced,
    RateLimited,
    UnknownTopic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Startup,
    Shutdown,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub accepted: u64,
    pub rate_limited: u64,
    pub unknown_topic: u64,
    /// Fair-queue entries overwritten before they were sent.
    pub replaced: u64,
    /// Oldest no_drop entries evicted because the queue was full.
    pub no_drop_overflow: u64,
    pub data_sent: u64,
    pub pings_sent: u64,
    /// Highest in-flight count observed right before a send started.
    pub max_in_flight_at_send: u64,
    /// Highest in-flight count observed right after a send.
    pub max_in_flight: u64,
}

/// One entry offered to [`fair_priority_order`].
#[derive(Debug, Clone, PartialEq)]
pub struct FairCandidate<'a> {
    pub topic: &'a str,
    pub priority: f64,
    pub last_tx_us: u64,
}

/// Orders topics by descending `priority * (now - last_tx)`; ties go to the
/// lexicographically smaller topic name.
pub fn fair_priority_order<'a>(entries: &[FairCandidate<'a>], now_us: u64) -> Vec<&'a str> {
    let mut scored: Vec<(f64, &str)> = entries
        .iter()
        .map(|e| {
            let waited = now_us.saturating_sub(e.last_tx_us) as f64 / 1e6;
            (e.priority * waited, e.topic)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().map(|(_, topic)| topic).collect()
}

#[derive(Debug)]
struct TopicSlot {
    spec: TopicPublishSpec,
    outbound: String,
    last_accept_us: Option<u64>,
    last_tx_us: u64,
}

#[derive(Debug)]
struct Queued {
    topic: String,
    payload: Bytes,
}

/// Client-side queues, clocks and backpressure counter.
#[derive(Debug)]
pub struct Client {
    config: ClientConfig,
    topics: HashMap<String, TopicSlot>,
    no_drop_queue: VecDeque<Queued>,
    // keyed by local topic, at most one entry each
    fair_queue: BTreeMap<String, Bytes>,
    in_flight: u64,
    sent_count: u64,
    last_pong_count: u64,
    connected: bool,
    stats: ClientStats,
}

impl Client {
    /// `start_us` seeds every topic's last-transmission clock.
    pub fn new(config: ClientConfig, start_us: u64) -> Result<Self, ClientError> {
        config.validate()?;
        let topics = config
            .local_topics
            .iter()
            .map(|spec| {
                let slot = TopicSlot {
                    spec: spec.clone(),
                    outbound: config.outbound_topic(&spec.topic),
                    last_accept_us: None,
                    last_tx_us: start_us,
                };
                (spec.topic.clone(), slot)
            })
            .collect();
        Ok(Self {
            config,
            topics,
            no_drop_queue: VecDeque::new(),
            fair_queue: BTreeMap::new(),
            in_flight: 0,
            sent_count: 0,
            last_pong_count: 0,
            connected: false,
            stats: ClientStats::default(),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn stats(&self) -> &ClientStats {
        &self.stats
    }

    pub fn in_flight(&self) -> u64 {
        self.in_flight
    }

    pub fn sent_count(&self) -> u64 {
        self.sent_count
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn no_drop_len(&self) -> usize {
        self.no_drop_queue.len()
    }

    pub fn fair_len(&self) -> usize {
        self.fair_queue.len()
    }

    pub fn has_pending(&self) -> bool {
        !self.no_drop_queue.is_empty() || !self.fair_queue.is_empty()
    }

    pub fn can_send(&self) -> bool {
        self.in_flight < self.config.backpressure_threshold
    }

    /// Payload currently waiting in the fair queue for `topic`.
    pub fn fair_entry(&self, topic: &str) -> Option<&Bytes> {
        self.fair_queue.get(topic)
    }

    /// Local topics in the no_drop queue, front first.
    pub fn no_drop_topics(&self) -> impl Iterator<Item = &str> {
        self.no_drop_queue.iter().map(|q| q.topic.as_str())
    }

    pub fn ingest_local_message(
        &mut self,
        payload: impl Into<Bytes>,
        topic: &str,
        now_us: u64,
    ) -> IngestOutcome {
        let Some(slot) = self.topics.get_mut(topic) else {
            self.stats.unknown_topic += 1;
            return IngestOutcome::UnknownTopic;
        };
        if let Some(last) = slot.last_accept_us {
            if now_us.saturating_sub(last) < slot.spec.min_interval_us() {
                self.stats.rate_limited += 1;
                return IngestOutcome::RateLimited;
            }
        }
        slot.last_accept_us = Some(now_us);
        self.stats.accepted += 1;

        let payload = payload.into();
        if slot.spec.no_drop {
            if self.no_drop_queue.len() >= self.config.no_drop_capacity {
                self.no_drop_queue.pop_front();
                self.stats.no_drop_overflow += 1;
            }
            self.no_drop_queue.push_back(Queued {
                topic: topic.to_owned(),
                payload,
            });
            IngestOutcome::Enqueued
        } else if let Some(entry) = self.fair_queue.get_mut(topic) {
            *entry = payload;
            self.stats.replaced += 1;
            IngestOutcome::Replaced
        } else {
            self.fair_queue.insert(topic.to_owned(), payload);
            IngestOutcome::Enqueued
        }
    }

    /// One scheduler pass: no_drop queue first, then the fair queue, both
    /// only while in-flight stays below the threshold, then a single PING.
    /// Returns nothing at all when the threshold is already reached.
    pub fn run_scheduler(&mut self, now_us: u64) -> Result<Vec<MessageEnvelope>, ClientError> {
        if !self.connected {
            return Err(ClientError::TransportClosed);
        }
        let threshold = self.config.backpressure_threshold;
        if self.in_flight >= threshold {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();

        while self.in_flight < threshold {
            let Some(q) = self.no_drop_queue.pop_front() else {
                break;
            };
            out.push(self.publish(&q.topic, q.payload, now_us));
        }

        if self.in_flight < threshold && !self.fair_queue.is_empty() {
            let candidates: Vec<FairCandidate<'_>> = self
                .fair_queue
                .keys()
                .map(|topic| {
                    let slot = &self.topics[topic];
                    FairCandidate {
                        topic,
                        priority: slot.spec.priority,
                        last_tx_us: slot.last_tx_us,
                    }
                })
                .collect();
            let order: Vec<String> = fair_priority_order(&candidates, now_us)
                .into_iter()
                .map(str::to_owned)
                .collect();
            for topic in order {
                if self.in_flight >= threshold {
                    break;
                }
                let payload = self.fair_queue.remove(&topic).expect("ordered from queue keys");
                out.push(self.publish(&topic, payload, now_us));
            }
        }

        out.push(MessageEnvelope::ping(self.sent_count, now_us));
        self.stats.pings_sent += 1;
        Ok(out)
    }

    fn publish(&mut self, topic: &str, payload: Bytes, now_us: u64) -> MessageEnvelope {
        self.stats.max_in_flight_at_send = self.stats.max_in_flight_at_send.max(self.in_flight);
        self.sent_count += 1;
        self.in_flight = self.sent_count - self.last_pong_count;
        self.stats.max_in_flight = self.stats.max_in_flight.max(self.in_flight);
        self.stats.data_sent += 1;

        let slot = self.topics.get_mut(topic).expect("queued topics are configured");
        slot.last_tx_us = now_us;
        MessageEnvelope::data(
            slot.outbound.clone(),
            slot.spec.msg_type.clone(),
            self.sent_count,
            now_us,
            payload,
        )
    }

    /// Applies a PONG; stale PONGs (lower count than already seen) change
    /// nothing. Returns the new in-flight count.
    pub fn handle_pong(&mut self, pong: &MessageEnvelope) -> u64 {
        debug_assert_eq!(pong.kind, Kind::Pong);
        let acked = pong.seq.min(self.sent_count);
        self.last_pong_count = self.last_pong_count.max(acked);
        self.in_flight = self.sent_count - self.last_pong_count;
        self.in_flight
    }

    pub fn announce_subscriptions(
        &self,
        phase: Phase,
        now_us: u64,
    ) -> Result<Vec<MessageEnvelope>, ClientError> {
        if !self.connected {
            return Err(ClientError::TransportClosed);
        }
        let action = match phase {
            Phase::Startup => SubscriptionAction::Subscribe,
            Phase::Shutdown => SubscriptionAction::Unsubscribe,
        };
        Ok(self
            .config
            .remote_topics
            .iter()
            .map(|t| {
                let body = SubscriptionBody {
                    action,
                    topic_regex: escape_literal(&t.topic),
                };
                MessageEnvelope::subscription(&body, now_us)
            })
            .collect())
    }

    /// Marks the transport up and returns the HELLO and startup
    /// subscriptions to send, in order. Counters restart from zero; queued
    /// messages are kept.
    pub fn on_connect(&mut self, now_us: u64) -> Result<Vec<MessageEnvelope>, ClientError> {
        self.reset_counters();
        self.connected = true;
        let hello = HelloBody::new(self.config.identity.as_str(), self.config.secret.as_str())?;
        let mut out = vec![MessageEnvelope::hello(&hello, now_us)];
        out.extend(self.announce_subscriptions(Phase::Startup, now_us)?);
        Ok(out)
    }

    /// Messages in flight on the dead connection are forgotten.
    pub fn on_disconnect(&mut self) {
        self.connected = false;
        self.reset_counters();
    }

    fn reset_counters(&mut self) {
        self.in_flight = 0;
        self.sent_count = 0;
        self.last_pong_count = 0;
    }
}
