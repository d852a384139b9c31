use std::collections::{BTreeMap, VecDeque};
use std::time::{Duration, Instant};

use bytes::{BufMut, Bytes, BytesMut};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    compute_metrics, Encoding, MessageRecord, Policy, Scenario, ScenarioResult, TopicCounts,
    Topology, PAYLOAD_HEADER_LEN, PRODUCER_NAME,
};
use crate::client::{Client, ClientConfig, TopicPublishSpec, TopicSubscribeSpec};
use crate::netsim::{secs_to_us, EventQueue, Link, SimClock, Transmit};
use crate::server::{AuthMap, AuthRule, ConnId, Op, PrincipalConfig, Relay};
use crate::wire::{encode_json_baseline, Kind, MessageEnvelope};

const PRODUCER_UP: usize = 0;
const PRODUCER_DOWN: usize = 1;
const SECRET: &str = "bench";

fn consumer_up(i: usize) -> usize {
    2 + 2 * i
}

fn consumer_down(i: usize) -> usize {
    3 + 2 * i
}

fn consumer_name(i: usize) -> String {
    format!("c{i}")
}

#[derive(Debug)]
struct Frame {
    env: MessageEnvelope,
    wire_bytes: usize,
    /// Destination consumer for peer-to-peer streams.
    to: usize,
}

#[derive(Debug)]
enum Event {
    Publish { publisher: usize, k: u64 },
    Tick,
    Arrive { link: usize, frame: Frame },
    Wake { link: usize },
}

struct Writer {
    link: Link,
    pending: VecDeque<Frame>,
    wake_pending: bool,
}

pub(super) struct Simulation<'a> {
    sc: &'a Scenario,
    encoding: Encoding,
    queue: EventQueue<Event>,
    clock: SimClock,
    writers: Vec<Writer>,
    client: Option<Client>,
    relay: Option<Relay>,
    producer_conn: ConnId,
    consumer_conns: Vec<ConnId>,
    bodies: Vec<Bytes>,
    naive_seq: u64,
    records: Vec<MessageRecord>,
    topics: BTreeMap<String, TopicCounts>,
    egress: u64,
    publish_end_us: u64,
    limit_us: u64,
    tick_armed: bool,
    /// Wall-clock start and speed-up factor when pacing a demo run.
    pace: Option<(Instant, f64)>,
}

impl<'a> Simulation<'a> {
    pub(super) fn new(sc: &'a Scenario) -> Self {
        let mut writers = Vec::with_capacity(2 + 2 * sc.consumer_count);
        let mk = |profile| Writer {
            link: Link::new(profile),
            pending: VecDeque::new(),
            wake_pending: false,
        };
        writers.push(mk(sc.profile.clone()));
        writers.push(mk(sc.consumer_profile()));
        for _ in 0..sc.consumer_count {
            writers.push(mk(sc.consumer_profile()));
            writers.push(mk(sc.consumer_profile()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(sc.profile.seed);
        let bodies = sc
            .publishers
            .iter()
            .map(|p| {
                let mut b = vec![0u8; p.payload_bytes - PAYLOAD_HEADER_LEN];
                rng.fill_bytes(&mut b);
                Bytes::from(b)
            })
            .collect();

        let topics = sc
            .publishers
            .iter()
            .map(|p| (sc.outbound_topic(&p.topic), TopicCounts::default()))
            .collect();

        let publish_end_us = secs_to_us(sc.publish_end_s());
        Self {
            sc,
            encoding: sc.encoding(),
            queue: EventQueue::default(),
            clock: SimClock::default(),
            writers,
            client: None,
            relay: None,
            producer_conn: ConnId(0),
            consumer_conns: Vec::new(),
            bodies,
            naive_seq: 0,
            records: Vec::new(),
            topics,
            egress: 0,
            publish_end_us,
            limit_us: publish_end_us + secs_to_us(sc.drain_s),
            tick_armed: false,
            pace: None,
        }
    }

    fn producer_config(&self) -> ClientConfig {
        let sc = self.sc;
        let mut cfg = ClientConfig::new(PRODUCER_NAME, PRODUCER_NAME, SECRET, sc.backpressure_threshold);
        cfg.scheduler_tick_ms = sc.scheduler_tick_ms;
        cfg.local_topics = sc
            .publishers
            .iter()
            .map(|p| {
                TopicPublishSpec::new(
                    &p.topic,
                    &p.msg_type,
                    p.priority,
                    p.rate_hz.unwrap_or(p.publish_hz),
                    p.no_drop || sc.policy == Policy::NoDropAll,
                )
            })
            .collect();
        cfg
    }

    fn consumer_client(&self, i: usize) -> Client {
        let name = consumer_name(i);
        let mut cfg = ClientConfig::new(&name, &name, SECRET, 1);
        cfg.remote_topics = self
            .sc
            .publishers
            .iter()
            .map(|p| TopicSubscribeSpec {
                topic: self.sc.outbound_topic(&p.topic),
                msg_type: p.msg_type.clone(),
            })
            .collect();
        Client::new(cfg, 0).expect("generated consumer config is valid")
    }

    fn build_relay(&self) -> Relay {
        let mut principals = vec![PrincipalConfig {
            identity: PRODUCER_NAME.into(),
            secret: SECRET.into(),
            rules: vec![AuthRule::new(&format!("/{PRODUCER_NAME}/.*"), Op::Send)],
        }];
        for i in 0..self.sc.consumer_count {
            principals.push(PrincipalConfig {
                identity: consumer_name(i),
                secret: SECRET.into(),
                rules: vec![AuthRule::new(".*", Op::Receive)],
            });
        }
        Relay::new(AuthMap::new(&principals).expect("generated principals are valid"))
    }

    /// Sleeps so that virtual time advances at `speed` times wall-clock time.
    pub(super) fn paced(mut self, speed: f64) -> Self {
        self.pace = Some((Instant::now(), speed));
        self
    }

    pub(super) fn run(mut self) -> ScenarioResult {
        self.start();
        let mut drained = true;
        while let Some((t, event)) = self.queue.pop() {
            if t > self.limit_us {
                drained = false;
                break;
            }
            if let Some((start, speed)) = self.pace {
                let due = start + Duration::from_secs_f64(t as f64 / 1e6 / speed);
                std::thread::sleep(due.saturating_duration_since(Instant::now()));
            }
            self.clock.advance_to(t);
            self.handle(event);
        }
        if self.client.as_ref().is_some_and(Client::has_pending)
            || self.writers.iter().any(|w| !w.pending.is_empty())
        {
            drained = false;
        }
        self.finish(drained)
    }

    fn start(&mut self) {
        let uses_client = self.sc.policy != Policy::Naive;
        if uses_client {
            self.client = Some(Client::new(self.producer_config(), 0).expect("validated scenario"));
        }
        if self.sc.topology == Topology::Relay {
            let mut relay = self.build_relay();
            self.producer_conn = relay.open_connection();
            self.consumer_conns = (0..self.sc.consumer_count).map(|_| relay.open_connection()).collect();
            self.relay = Some(relay);

            for i in 0..self.sc.consumer_count {
                let mut c = self.consumer_client(i);
                for e in c.on_connect(0).expect("consumer connect") {
                    self.send_control(consumer_up(i), e);
                }
            }
            let opening = match &mut self.client {
                Some(c) => c.on_connect(0).expect("producer connect"),
                None => {
                    let mut c = Client::new(self.producer_config(), 0).expect("validated scenario");
                    c.on_connect(0).expect("producer connect")
                }
            };
            for e in opening {
                self.send_control(PRODUCER_UP, e);
            }
        } else if let Some(c) = &mut self.client {
            c.on_connect(0).expect("producer connect");
        }

        for (i, p) in self.sc.publishers.iter().enumerate() {
            if p.message_count() > 0 {
                self.queue.push(p.publish_time_us(0), Event::Publish { publisher: i, k: 0 });
            }
        }
        if uses_client {
            self.arm_tick(0);
        }
    }

    fn arm_tick(&mut self, at_us: u64) {
        if !self.tick_armed {
            self.tick_armed = true;
            self.queue.push(at_us, Event::Tick);
        }
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Publish { publisher, k } => self.publish(publisher, k),
            Event::Tick => {
                self.tick_armed = false;
                self.run_scheduler();
                let now = self.clock.now_us();
                let busy = self.client.as_ref().is_some_and(Client::has_pending);
                if now < self.publish_end_us || busy {
                    self.arm_tick(now + self.sc.scheduler_tick_ms * 1000);
                }
            }
            Event::Arrive { link, frame } => self.arrive(link, frame),
            Event::Wake { link } => {
                self.writers[link].wake_pending = false;
                self.flush(link);
            }
        }
    }

    fn payload(&self, publisher: usize, k: u64) -> Bytes {
        let body = &self.bodies[publisher];
        let mut b = BytesMut::with_capacity(PAYLOAD_HEADER_LEN + body.len());
        b.put_u64_le(self.clock.now_us());
        b.put_u64_le(k);
        b.put_slice(body);
        b.freeze()
    }

    fn publish(&mut self, publisher: usize, k: u64) {
        let spec = &self.sc.publishers[publisher];
        if k + 1 < spec.message_count() {
            self.queue
                .push(spec.publish_time_us(k + 1), Event::Publish { publisher, k: k + 1 });
        }
        let topic = self.sc.outbound_topic(&spec.topic);
        self.topics.get_mut(&topic).expect("known topic").published += 1;
        let payload = self.payload(publisher, k);
        let now = self.clock.now_us();

        if let Some(client) = &mut self.client {
            client.ingest_local_message(payload, &spec.topic, now);
            return;
        }
        let copies = match self.sc.topology {
            Topology::Relay => 1,
            Topology::PeerToPeer => self.sc.consumer_count,
        };
        for to in 0..copies {
            self.naive_seq += 1;
            let env = MessageEnvelope::data(topic.clone(), spec.msg_type.clone(), self.naive_seq, now, payload.clone());
            let wire_bytes = match self.encoding {
                Encoding::Binary => env.encoded_len(),
                Encoding::Json => encode_json_baseline(&env).expect("bounded fields").len(),
            };
            self.send(PRODUCER_UP, Frame { env, wire_bytes, to });
        }
    }

    fn run_scheduler(&mut self) {
        let now = self.clock.now_us();
        let Some(client) = &mut self.client else {
            return;
        };
        let out = client.run_scheduler(now).expect("producer stays connected");
        for env in out {
            self.send_control(PRODUCER_UP, env);
        }
    }

    fn send_control(&mut self, link: usize, env: MessageEnvelope) {
        let wire_bytes = env.encoded_len();
        self.send(link, Frame { env, wire_bytes, to: 0 });
    }

    fn send(&mut self, link: usize, frame: Frame) {
        self.writers[link].pending.push_back(frame);
        self.flush(link);
    }

    fn flush(&mut self, link: usize) {
        let now_s = self.clock.now_s();
        let now_us = self.clock.now_us();
        let w = &mut self.writers[link];
        while let Some(front) = w.pending.front() {
            match w.link.link_transmit(front.wire_bytes, now_s) {
                Transmit::Deliver { at } => {
                    let frame = w.pending.pop_front().expect("front exists");
                    if link == PRODUCER_UP {
                        self.egress += frame.wire_bytes as u64;
                    }
                    self.queue.push(secs_to_us(at).max(now_us), Event::Arrive { link, frame });
                }
                Transmit::BlockedUntil { t } => {
                    if !w.wake_pending {
                        w.wake_pending = true;
                        self.queue.push(secs_to_us(t).max(now_us + 1), Event::Wake { link });
                    }
                    break;
                }
            }
        }
    }

    fn arrive(&mut self, link: usize, frame: Frame) {
        match link {
            PRODUCER_UP if self.sc.topology == Topology::PeerToPeer => self.record(frame.to, &frame),
            PRODUCER_UP => self.relay_in(self.producer_conn, frame),
            PRODUCER_DOWN => {
                let threshold = self.sc.backpressure_threshold;
                let Some(client) = &mut self.client else {
                    return;
                };
                if frame.env.kind != Kind::Pong {
                    return;
                }
                let before = client.in_flight();
                let after = client.handle_pong(&frame.env);
                if before >= threshold && after < threshold {
                    self.run_scheduler();
                }
            }
            l if l % 2 == 0 => {
                let conn = self.consumer_conns[(l - 2) / 2];
                self.relay_in(conn, frame);
            }
            l => self.record((l - 3) / 2, &frame),
        }
    }

    fn relay_in(&mut self, conn: ConnId, frame: Frame) {
        let relay = self.relay.as_mut().expect("relay topology");
        let data_bytes = frame.wire_bytes;
        let outcome = relay.handle_frame(frame.env, conn);
        debug_assert!(outcome.close.is_none(), "bench peers never misbehave: {:?}", outcome.close);
        for (to, env) in outcome.outbound {
            let link = if to == self.producer_conn {
                PRODUCER_DOWN
            } else {
                let i = self.consumer_conns.iter().position(|&c| c == to).expect("known conn");
                consumer_down(i)
            };
            let wire_bytes = if env.kind == Kind::Data { data_bytes } else { env.encoded_len() };
            self.send(link, Frame { env, wire_bytes, to: 0 });
        }
    }

    fn record(&mut self, consumer: usize, frame: &Frame) {
        let env = &frame.env;
        if env.kind != Kind::Data {
            return;
        }
        let produced = u64::from_le_bytes(env.payload[..8].try_into().expect("payload header"));
        self.records.push(MessageRecord {
            topic: env.topic.clone(),
            seq: env.seq,
            send_timestamp_us: produced,
            receive_timestamp_us: self.clock.now_us(),
            consumer,
            payload_bytes: env.payload.len(),
        });
        if let Some(c) = self.topics.get_mut(&env.topic) {
            c.delivered += 1;
        }
    }

    fn finish(self, drained: bool) -> ScenarioResult {
        let metrics = compute_metrics(&self.records, &self.sc.profile.dropout_windows);
        ScenarioResult {
            name: self.sc.name.clone(),
            policy: self.sc.policy,
            topology: self.sc.topology,
            consumer_count: self.sc.consumer_count,
            records: self.records,
            metrics,
            topics: self.topics,
            producer_egress_bytes: self.egress,
            client_stats: self.client.map(|c| c.stats().clone()).unwrap_or_default(),
            end_us: self.clock.now_us(),
            drained,
        }
    }
}
