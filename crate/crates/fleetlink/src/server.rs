//! Central relay state: authentication, topic authorization, the
//! subscription map and fan-out.
//!
//! Like the client, [`Relay`] does no IO. Transports hand it frames per
//! connection and write out whatever it returns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern::{PatternError, TopicPattern};
use crate::wire::{decode_envelope, HelloBody, Kind, MessageEnvelope, SubscriptionAction};

#[derive(Debug, Error)]
pub enum ServerConfigError {
    #[error("principal {0:?} is defined twice")]
    DuplicatePrincipal(String),
    #[error("principal {0:?} needs a non-empty secret")]
    MissingSecret(String),
    #[error("principal {identity:?}: {source}")]
    BadRule {
        identity: String,
        #[source]
        source: PatternError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Send,
    Receive,
    Both,
}

impl Op {
    fn grants(self, wanted: Op) -> bool {
        self == Op::Both || self == wanted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthRule {
    pub topic_regex: String,
    pub op: Op,
}

impl AuthRule {
    pub fn new(topic_regex: &str, op: Op) -> Self {
        Self {
            topic_regex: topic_regex.to_owned(),
            op,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalConfig {
    pub identity: String,
    pub secret: String,
    #[serde(default)]
    pub rules: Vec<AuthRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub ws_listen: Option<String>,
    #[serde(default)]
    pub principals: Vec<PrincipalConfig>,
}

fn default_listen() -> String {
    "127.0.0.1:7400".to_owned()
}

#[derive(Debug)]
struct PrincipalEntry {
    secret: String,
    rules: Vec<(TopicPattern, Op)>,
}

/// Identity to credential and authorization rules. Read-only once built.
#[derive(Debug, Default)]
pub struct AuthMap {
    principals: BTreeMap<String, PrincipalEntry>,
}

impl AuthMap {
    pub fn new(principals: &[PrincipalConfig]) -> Result<Self, ServerConfigError> {
        let mut map = BTreeMap::new();
        for p in principals {
            if p.secret.is_empty() {
                return Err(ServerConfigError::MissingSecret(p.identity.clone()));
            }
            let rules = p
                .rules
                .iter()
                .map(|r| Ok((TopicPattern::compile(&r.topic_regex)?, r.op)))
                .collect::<Result<Vec<_>, PatternError>>()
                .map_err(|source| ServerConfigError::BadRule {
                    identity: p.identity.clone(),
                    source,
                })?;
            let entry = PrincipalEntry {
                secret: p.secret.clone(),
                rules,
            };
            if map.insert(p.identity.clone(), entry).is_some() {
                return Err(ServerConfigError::DuplicatePrincipal(p.identity.clone()));
            }
        }
        Ok(Self { principals: map })
    }

    pub fn check_credential(&self, identity: &str, secret: &str) -> bool {
        self.principals
            .get(identity)
            .is_some_and(|p| p.secret == secret)
    }

    /// Default deny: true only if some rule fully matches `topic` and grants `op`.
    pub fn is_authorized(&self, principal: &str, topic: &str, op: Op) -> bool {
        self.principals.get(principal).is_some_and(|p| {
            p.rules
                .iter()
                .any(|(pattern, rule_op)| rule_op.grants(op) && pattern.is_match(topic))
        })
    }

    fn may_receive_anything(&self, principal: &str) -> bool {
        self.principals
            .get(principal)
            .is_some_and(|p| p.rules.iter().any(|(_, op)| op.grants(Op::Receive)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnId(pub u64);

impl fmt::Display for ConnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "conn#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionState {
    pub handle: ConnId,
    pub principal: Option<String>,
    pub data_received_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HelloOutcome {
    Authenticated,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloseReason {
    BadCredential,
    DuplicateHello,
    NotAuthenticated,
    UnauthorizedSend,
}

impl fmt::Display for CloseReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CloseReason::BadCredential => "bad credential",
            CloseReason::DuplicateHello => "hello on an authenticated connection",
            CloseReason::NotAuthenticated => "frame before hello",
            CloseReason::UnauthorizedSend => "unauthorized send",
        };
        f.write_str(s)
    }
}

/// Frames to write and whether the source connection must be closed. When
/// `close` is set the relay has already forgotten the connection.
#[derive(Debug, PartialEq)]
pub struct FrameOutcome<F = MessageEnvelope> {
    pub outbound: Vec<(ConnId, F)>,
    pub close: Option<CloseReason>,
}

impl<F> Default for FrameOutcome<F> {
    fn default() -> Self {
        Self {
            outbound: Vec::new(),
            close: None,
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct RelayStats {
    pub malformed: u64,
    pub data_received: u64,
    pub data_relayed: u64,
    pub closed: u64,
}

#[derive(Debug)]
struct Subscription {
    pattern: TopicPattern,
    members: BTreeSet<ConnId>,
}

#[derive(Debug)]
pub struct Relay {
    auth: AuthMap,
    conns: BTreeMap<ConnId, ConnectionState>,
    subscriptions: BTreeMap<String, Subscription>,
    next_id: u64,
    stats: RelayStats,
}

impl Relay {
    pub fn new(auth: AuthMap) -> Self {
        Self {
            auth,
            conns: BTreeMap::new(),
            subscriptions: BTreeMap::new(),
            next_id: 0,
            stats: RelayStats::default(),
        }
    }

    pub fn from_config(config: &ServerConfig) -> Result<Self, ServerConfigError> {
        Ok(Self::new(AuthMap::new(&config.principals)?))
    }

    pub fn auth(&self) -> &AuthMap {
        &self.auth
    }

    pub fn stats(&self) -> &RelayStats {
        &self.stats
    }

    pub fn connection(&self, conn: ConnId) -> Option<&ConnectionState> {
        self.conns.get(&conn)
    }

    pub fn connection_count(&self) -> usize {
        self.conns.len()
    }

    /// Connections currently holding `pattern`.
    pub fn subscribers_of(&self, pattern: &str) -> Vec<ConnId> {
        self.subscriptions
            .get(pattern)
            .map(|s| s.members.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn open_connection(&mut self) -> ConnId {
        let handle = ConnId(self.next_id);
        self.next_id += 1;
        self.conns.insert(
            handle,
            ConnectionState {
                handle,
                principal: None,
                data_received_count: 0,
            },
        );
        handle
    }

    pub fn is_authorized(&self, principal: &str, topic: &str, op: Op) -> bool {
        self.auth.is_authorized(principal, topic, op)
    }

    pub fn handle_hello(&mut self, body: &HelloBody, conn: ConnId) -> HelloOutcome {
        let ok = self.auth.check_credential(&body.identity, &body.secret);
        match self.conns.get_mut(&conn) {
            Some(state) if ok && state.principal.is_none() => {
                state.principal = Some(body.identity.clone());
                HelloOutcome::Authenticated
            }
            Some(_) => {
                self.close(conn);
                HelloOutcome::Rejected
            }
            None => HelloOutcome::Rejected,
        }
    }

    /// Decodes one raw frame and handles it. Relayed DATA frames reuse the
    /// received bytes untouched.
    pub fn handle_bytes(&mut self, conn: ConnId, frame: Bytes) -> FrameOutcome<Bytes> {
        let envelope = match decode_envelope(&frame) {
            Ok(e) => e,
            Err(err) => {
                tracing::debug!(%conn, %err, "dropping malformed frame");
                self.stats.malformed += 1;
                return FrameOutcome::default();
            }
        };
        let is_data = envelope.kind == Kind::Data;
        let outcome = self.handle_frame(envelope, conn);
        FrameOutcome {
            outbound: outcome
                .outbound
                .into_iter()
                .map(|(to, e)| {
                    let bytes = if is_data && e.kind == Kind::Data {
                        frame.clone()
                    } else {
                        Bytes::from(e.encode().expect("server-built envelopes are in bounds"))
                    };
                    (to, bytes)
                })
                .collect(),
            close: outcome.close,
        }
    }

    pub fn handle_frame(&mut self, e: MessageEnvelope, conn: ConnId) -> FrameOutcome {
        let Some(state) = self.conns.get(&conn) else {
            return FrameOutcome::default();
        };
        let principal = state.principal.clone();

        if e.kind == Kind::Hello {
            if principal.is_some() {
                return self.closing(conn, CloseReason::DuplicateHello);
            }
            let Ok(body) = e.hello_body() else {
                self.stats.malformed += 1;
                return self.closing(conn, CloseReason::BadCredential);
            };
            return match self.handle_hello(&body, conn) {
                HelloOutcome::Authenticated => FrameOutcome::default(),
                HelloOutcome::Rejected => FrameOutcome {
                    outbound: Vec::new(),
                    close: Some(CloseReason::BadCredential),
                },
            };
        }
        let Some(principal) = principal else {
            return self.closing(conn, CloseReason::NotAuthenticated);
        };

        match e.kind {
            Kind::Ping => {
                let count = self.conns[&conn].data_received_count;
                FrameOutcome {
                    outbound: vec![(conn, MessageEnvelope::pong(count, e.timestamp_us))],
                    close: None,
                }
            }
            Kind::Subscription => {
                self.handle_subscription(&e, &principal, conn);
                FrameOutcome::default()
            }
            Kind::Data => self.handle_data(e, &principal, conn),
            Kind::Pong => {
                self.stats.malformed += 1;
                FrameOutcome::default()
            }
            Kind::Hello => unreachable!("handled above"),
        }
    }

    fn handle_subscription(&mut self, e: &MessageEnvelope, principal: &str, conn: ConnId) {
        let Ok(body) = e.subscription_body() else {
            self.stats.malformed += 1;
            return;
        };
        match body.action {
            SubscriptionAction::Subscribe => {
                // per-message RECEIVE checks in fan-out are the real gate
                if !self.auth.may_receive_anything(principal) {
                    return;
                }
                if let Some(sub) = self.subscriptions.get_mut(&body.topic_regex) {
                    sub.members.insert(conn);
                    return;
                }
                match TopicPattern::compile(&body.topic_regex) {
                    Ok(pattern) => {
                        self.subscriptions.insert(
                            body.topic_regex,
                            Subscription {
                                pattern,
                                members: BTreeSet::from([conn]),
                            },
                        );
                    }
                    Err(err) => {
                        tracing::debug!(%conn, %err, "rejecting subscription pattern");
                        self.stats.malformed += 1;
                    }
                }
            }
            SubscriptionAction::Unsubscribe => {
                if let Some(sub) = self.subscriptions.get_mut(&body.topic_regex) {
                    sub.members.remove(&conn);
                    if sub.members.is_empty() {
                        self.subscriptions.remove(&body.topic_regex);
                    }
                }
            }
        }
    }

    fn handle_data(&mut self, e: MessageEnvelope, principal: &str, conn: ConnId) -> FrameOutcome {
        if !self.auth.is_authorized(principal, &e.topic, Op::Send) {
            return self.closing(conn, CloseReason::UnauthorizedSend);
        }
        self.conns
            .get_mut(&conn)
            .expect("checked by caller")
            .data_received_count += 1;
        self.stats.data_received += 1;

        let recipients = self.recipients(&e.topic);
        self.stats.data_relayed += recipients.len() as u64;
        let outbound = recipients.into_iter().map(|to| (to, e.clone())).collect();
        FrameOutcome {
            outbound,
            close: None,
        }
    }

    /// Connections that would receive a DATA frame on `topic`, ascending.
    pub fn recipients(&self, topic: &str) -> Vec<ConnId> {
        let mut matched = BTreeSet::new();
        for sub in self.subscriptions.values() {
            if sub.pattern.is_match(topic) {
                matched.extend(sub.members.iter().copied());
            }
        }
        matched
            .into_iter()
            .filter(|c| {
                self.conns
                    .get(c)
                    .and_then(|s| s.principal.as_deref())
                    .is_some_and(|p| self.auth.is_authorized(p, topic, Op::Receive))
            })
            .collect()
    }

    fn closing<F>(&mut self, conn: ConnId, reason: CloseReason) -> FrameOutcome<F> {
        tracing::debug!(%conn, %reason, "closing connection");
        self.close(conn);
        FrameOutcome {
            outbound: Vec::new(),
            close: Some(reason),
        }
    }

    fn close(&mut self, conn: ConnId) {
        if self.conns.contains_key(&conn) {
            self.stats.closed += 1;
        }
        self.on_disconnect(conn);
    }

    pub fn on_disconnect(&mut self, conn: ConnId) {
        self.conns.remove(&conn);
        self.subscriptions.retain(|_, sub| {
            sub.members.remove(&conn);
            !sub.members.is_empty()
        });
    }
}
