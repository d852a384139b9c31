//! Reference models used as oracles by the integration tests. Each one is
//! written from the protocol rules directly and shares no code with the
//! crate under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

// ---------------------------------------------------------------------------
// Regex subset: literals, '.', '*', '+', '?', '|', '( )', '[ ]', '\' escapes.

#[derive(Debug, Clone, PartialEq)]
pub enum Re {
    Empty,
    Lit(char),
    Any,
    Class { negated: bool, items: Vec<(char, char)> },
    Cat(Vec<Re>),
    Alt(Vec<Re>),
    Star(Box<Re>),
    Plus(Box<Re>),
    Opt(Box<Re>),
}

impl Re {
    /// Renders with enough parentheses that precedence never matters.
    pub fn render(&self) -> String {
        match self {
            Re::Empty => String::new(),
            Re::Lit(c) => escape_char(*c),
            Re::Any => ".".into(),
            Re::Class { negated, items } => {
                let mut s = String::from("[");
                if *negated {
                    s.push('^');
                }
                for &(a, b) in items {
                    s.push_str(&class_char(a));
                    if a != b {
                        s.push('-');
                        s.push_str(&class_char(b));
                    }
                }
                s.push(']');
                s
            }
            Re::Cat(parts) => parts.iter().map(|p| format!("({})", p.render())).collect(),
            Re::Alt(parts) => format!("({})", parts.iter().map(Re::render).collect::<Vec<_>>().join("|")),
            Re::Star(r) => format!("({})*", r.render()),
            Re::Plus(r) => format!("({})+", r.render()),
            Re::Opt(r) => format!("({})?", r.render()),
        }
    }
}

fn escape_char(c: char) -> String {
    if ".*+?|()[]{}^$\\".contains(c) {
        format!("\\{c}")
    } else {
        c.to_string()
    }
}

fn class_char(c: char) -> String {
    if "]\\^-[".contains(c) {
        format!("\\{c}")
    } else {
        c.to_string()
    }
}

/// Parses the subset into an AST. Returns None on syntax outside it.
pub fn parse_re(src: &str) -> Option<Re> {
    let chars: Vec<char> = src.chars().collect();
    let mut pos = 0;
    let re = parse_alt(&chars, &mut pos)?;
    (pos == chars.len()).then_some(re)
}

fn parse_alt(c: &[char], pos: &mut usize) -> Option<Re> {
    let mut branches = vec![parse_cat(c, pos)?];
    while *pos < c.len() && c[*pos] == '|' {
        *pos += 1;
        branches.push(parse_cat(c, pos)?);
    }
    Some(if branches.len() == 1 { branches.pop().unwrap() } else { Re::Alt(branches) })
}

fn parse_cat(c: &[char], pos: &mut usize) -> Option<Re> {
    let mut parts = Vec::new();
    while *pos < c.len() && c[*pos] != '|' && c[*pos] != ')' {
        let mut atom = match c[*pos] {
            '(' => {
                *pos += 1;
                let inner = parse_alt(c, pos)?;
                if c.get(*pos) != Some(&')') {
                    return None;
                }
                *pos += 1;
                inner
            }
            '[' => {
                *pos += 1;
                parse_class(c, pos)?
            }
            '.' => {
                *pos += 1;
                Re::Any
            }
            '\\' => {
                let e = *c.get(*pos + 1)?;
                *pos += 2;
                Re::Lit(e)
            }
            '*' | '+' | '?' | ']' | '{' | '}' | '^' | '$' => return None,
            ch => {
                *pos += 1;
                Re::Lit(ch)
            }
        };
        while let Some(&op) = c.get(*pos) {
            atom = match op {
                '*' => Re::Star(Box::new(atom)),
                '+' => Re::Plus(Box::new(atom)),
                '?' => Re::Opt(Box::new(atom)),
                _ => break,
            };
            *pos += 1;
        }
        parts.push(atom);
    }
    Some(match parts.len() {
        0 => Re::Empty,
        1 => parts.pop().unwrap(),
        _ => Re::Cat(parts),
    })
}

fn parse_class(c: &[char], pos: &mut usize) -> Option<Re> {
    let mut negated = false;
    if c.get(*pos) == Some(&'^') {
        negated = true;
        *pos += 1;
    }
    let mut items = Vec::new();
    let mut first = true;
    loop {
        let ch = *c.get(*pos)?;
        if ch == ']' && !first {
            *pos += 1;
            break;
        }
        first = false;
        let lo = read_class_char(c, pos)?;
        let hi = if c.get(*pos) == Some(&'-') && c.get(*pos + 1).is_some_and(|&n| n != ']') {
            *pos += 1;
            read_class_char(c, pos)?
        } else {
            lo
        };
        items.push((lo, hi));
    }
    Some(Re::Class { negated, items })
}

fn read_class_char(c: &[char], pos: &mut usize) -> Option<char> {
    let ch = *c.get(*pos)?;
    if ch == '\\' {
        let e = *c.get(*pos + 1)?;
        *pos += 2;
        Some(e)
    } else {
        *pos += 1;
        Some(ch)
    }
}

/// All positions where a match of `re` starting at `at` can end.
fn ends(re: &Re, s: &[char], at: usize) -> BTreeSet<usize> {
    let one = |ok: bool| if ok { BTreeSet::from([at + 1]) } else { BTreeSet::new() };
    match re {
        Re::Empty => BTreeSet::from([at]),
        Re::Lit(c) => one(s.get(at) == Some(c)),
        Re::Any => one(s.get(at).is_some_and(|&c| c != '\n')),
        Re::Class { negated, items } => one(
            s.get(at)
                .is_some_and(|&c| items.iter().any(|&(a, b)| a <= c && c <= b) != *negated),
        ),
        Re::Cat(parts) => parts.iter().fold(BTreeSet::from([at]), |starts, p| {
            starts.iter().flat_map(|&i| ends(p, s, i)).collect()
        }),
        Re::Alt(parts) => parts.iter().flat_map(|p| ends(p, s, at)).collect(),
        Re::Opt(r) => {
            let mut e = ends(r, s, at);
            e.insert(at);
            e
        }
        Re::Star(r) | Re::Plus(r) => {
            let mut reached = BTreeSet::new();
            let mut frontier: Vec<usize> = ends(r, s, at).into_iter().collect();
            while let Some(i) = frontier.pop() {
                if reached.insert(i) {
                    frontier.extend(ends(r, s, i));
                }
            }
            if matches!(re, Re::Star(_)) {
                reached.insert(at);
            }
            reached
        }
    }
}

pub fn re_full_match(re: &Re, s: &str) -> bool {
    let chars: Vec<char> = s.chars().collect();
    ends(re, &chars, 0).contains(&chars.len())
}

pub fn full_match(pattern: &str, s: &str) -> bool {
    re_full_match(&parse_re(pattern).expect("pattern in subset"), s)
}

// ---------------------------------------------------------------------------
// Client: rate limit, no-drop FIFO, one-slot-per-topic fair queue,
// stop-and-wait threshold, one PING per pass.

#[derive(Debug, Clone)]
pub struct RefTopic {
    pub name: String,
    pub priority: f64,
    pub rate_hz: f64,
    pub no_drop: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefOut {
    Data { topic: String, seq: u64, at_us: u64, payload: Vec<u8> },
    Ping { seq: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefIngest {
    Enqueued,
    Replaced,
    RateLimited,
}

pub struct RefClient {
    pub topics: Vec<RefTopic>,
    pub n_t: u64,
    fifo: VecDeque<(usize, Vec<u8>)>,
    slots: BTreeMap<usize, Vec<u8>>,
    accepted_at: Vec<Option<u64>>,
    sent_at: Vec<u64>,
    sent: u64,
    acked: u64,
}

impl RefClient {
    pub fn new(topics: Vec<RefTopic>, n_t: u64, start_us: u64) -> Self {
        let k = topics.len();
        Self {
            topics,
            n_t,
            fifo: VecDeque::new(),
            slots: BTreeMap::new(),
            accepted_at: vec![None; k],
            sent_at: vec![start_us; k],
            sent: 0,
            acked: 0,
        }
    }

    fn index(&self, name: &str) -> usize {
        self.topics.iter().position(|t| t.name == name).expect("known topic")
    }

    pub fn in_flight(&self) -> u64 {
        self.sent - self.acked
    }

    pub fn ingest(&mut self, name: &str, payload: Vec<u8>, now_us: u64) -> RefIngest {
        let i = self.index(name);
        if let Some(prev) = self.accepted_at[i] {
            // elapsed seconds below 1/r is rejected
            if now_us - prev < (1e6 / self.topics[i].rate_hz) as u64 {
                return RefIngest::RateLimited;
            }
        }
        self.accepted_at[i] = Some(now_us);
        if self.topics[i].no_drop {
            self.fifo.push_back((i, payload));
            RefIngest::Enqueued
        } else if self.slots.insert(i, payload).is_some() {
            RefIngest::Replaced
        } else {
            RefIngest::Enqueued
        }
    }

    pub fn tick(&mut self, now_us: u64) -> Vec<RefOut> {
        let mut out = Vec::new();
        if self.in_flight() >= self.n_t {
            return out;
        }
        while self.in_flight() < self.n_t {
            let Some((i, p)) = self.fifo.pop_front() else { break };
            out.push(self.send(i, p, now_us));
        }
        let mut order: Vec<usize> = self.slots.keys().copied().collect();
        let score = |i: usize| self.topics[i].priority * ((now_us - self.sent_at[i]) as f64 / 1e6);
        // bubble sort: descending score, then ascending name
        for a in 0..order.len() {
            for b in 0..order.len() - 1 - a {
                let (x, y) = (order[b], order[b + 1]);
                let swap = score(y) > score(x) || (score(y) == score(x) && self.topics[y].name < self.topics[x].name);
                if swap {
                    order.swap(b, b + 1);
                }
            }
        }
        for i in order {
            if self.in_flight() >= self.n_t {
                break;
            }
            let p = self.slots.remove(&i).unwrap();
            out.push(self.send(i, p, now_us));
        }
        out.push(RefOut::Ping { seq: self.sent });
        out
    }

    fn send(&mut self, i: usize, payload: Vec<u8>, now_us: u64) -> RefOut {
        self.sent += 1;
        self.sent_at[i] = now_us;
        RefOut::Data {
            topic: self.topics[i].name.clone(),
            seq: self.sent,
            at_us: now_us,
            payload,
        }
    }

    pub fn pong(&mut self, seq: u64) {
        self.acked = self.acked.max(seq.min(self.sent));
    }

    pub fn sent_count(&self) -> u64 {
        self.sent
    }
}

// ---------------------------------------------------------------------------
// Relay: credential table, default-deny rules, pattern subscriptions,
// per-message RECEIVE check.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefOp {
    Send,
    Receive,
    Both,
}

#[derive(Debug, Clone)]
pub struct RefPrincipal {
    pub identity: String,
    pub secret: String,
    pub rules: Vec<(String, RefOp)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefReply {
    /// Connections that receive a copy of a DATA frame, ascending.
    Relayed(Vec<usize>),
    Pong(u64),
    Closed,
    Nothing,
}

#[derive(Debug, Clone, Default)]
struct RefConn {
    principal: Option<usize>,
    open: bool,
    data_in: u64,
    patterns: BTreeSet<String>,
}

pub struct RefRelay {
    pub principals: Vec<RefPrincipal>,
    conns: Vec<RefConn>,
}

impl RefRelay {
    pub fn new(principals: Vec<RefPrincipal>, connections: usize) -> Self {
        let conns = (0..connections)
            .map(|_| RefConn {
                open: true,
                ..RefConn::default()
            })
            .collect();
        Self { principals, conns }
    }

    pub fn is_open(&self, c: usize) -> bool {
        self.conns[c].open
    }

    pub fn allowed(&self, principal: usize, topic: &str, want: RefOp) -> bool {
        self.principals[principal]
            .rules
            .iter()
            .any(|(re, op)| (*op == want || *op == RefOp::Both) && full_match(re, topic))
    }

    fn close(&mut self, c: usize) -> RefReply {
        self.conns[c] = RefConn::default();
        RefReply::Closed
    }

    pub fn hello(&mut self, c: usize, identity: &str, secret: &str) -> RefReply {
        if !self.conns[c].open {
            return RefReply::Nothing;
        }
        if self.conns[c].principal.is_some() {
            return self.close(c);
        }
        match self
            .principals
            .iter()
            .position(|p| p.identity == identity && p.secret == secret)
        {
            Some(p) => {
                self.conns[c].principal = Some(p);
                RefReply::Nothing
            }
            None => self.close(c),
        }
    }

    pub fn subscribe(&mut self, c: usize, pattern: &str, add: bool) -> RefReply {
        if !self.conns[c].open {
            return RefReply::Nothing;
        }
        let Some(p) = self.conns[c].principal else {
            return self.close(c);
        };
        if add {
            let may_receive = self.principals[p]
                .rules
                .iter()
                .any(|(_, op)| matches!(op, RefOp::Receive | RefOp::Both));
            if may_receive {
                self.conns[c].patterns.insert(pattern.to_owned());
            }
        } else {
            self.conns[c].patterns.remove(pattern);
        }
        RefReply::Nothing
    }

    pub fn ping(&mut self, c: usize) -> RefReply {
        if !self.conns[c].open {
            return RefReply::Nothing;
        }
        if self.conns[c].principal.is_none() {
            return self.close(c);
        }
        RefReply::Pong(self.conns[c].data_in)
    }

    pub fn data(&mut self, c: usize, topic: &str) -> RefReply {
        if !self.conns[c].open {
            return RefReply::Nothing;
        }
        let Some(p) = self.conns[c].principal else {
            return self.close(c);
        };
        if !self.allowed(p, topic, RefOp::Send) {
            return self.close(c);
        }
        self.conns[c].data_in += 1;
        let mut to = Vec::new();
        for (i, conn) in self.conns.iter().enumerate() {
            let Some(q) = conn.principal else { continue };
            if conn.open
                && conn.patterns.iter().any(|pat| full_match(pat, topic))
                && self.allowed(q, topic, RefOp::Receive)
            {
                to.push(i);
            }
        }
        RefReply::Relayed(to)
    }

    pub fn disconnect(&mut self, c: usize) {
        self.conns[c] = RefConn::default();
    }

    /// A fresh connection takes over slot `c`.
    pub fn reconnect(&mut self, c: usize) {
        self.conns[c] = RefConn {
            open: true,
            ..RefConn::default()
        };
    }
}
