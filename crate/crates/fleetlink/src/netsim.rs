//! Deterministic link emulation on virtual time.
//!
//! A [`Link`] serializes frames FIFO through a token bucket whose fill rate
//! follows [`NetProfile::bandwidth_at`]: a constant rate, an optional linear
//! ramp, and dropout windows where the rate is zero. Dropouts stall the link
//! rather than lose data; bytes pile up in the transport buffer and writes
//! block once it is full.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BUFFER_BYTES: usize = 256 * 1024;
pub const DEFAULT_BURST_BYTES: u64 = 1500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("{0} must be positive and finite")]
    NotPositive(&'static str),
    #[error("{0} must be non-negative and finite")]
    Negative(&'static str),
    #[error("dropout window [{0}, {1}) is empty or reversed")]
    BadWindow(f64, f64),
    #[error("dropout windows overlap")]
    OverlappingWindows,
    #[error("degradation ramp must have start_s < end_s")]
    BadRamp,
}

/// Linear bandwidth ramp. After `end_s` the link stays at `end_bps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Degradation {
    pub start_bps: f64,
    pub end_bps: f64,
    pub start_s: f64,
    pub end_s: f64,
}

fn default_burst() -> u64 {
    DEFAULT_BURST_BYTES
}

fn default_buffer() -> usize {
    DEFAULT_BUFFER_BYTES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetProfile {
    pub bandwidth_bps: f64,
    #[serde(default = "default_burst")]
    pub burst_bytes: u64,
    #[serde(default)]
    pub base_delay_ms: f64,
    /// Half-open `[start_s, end_s)` intervals with no transmission.
    #[serde(default)]
    pub dropout_windows: Vec<(f64, f64)>,
    #[serde(default)]
    pub degradation: Option<Degradation>,
    #[serde(default)]
    pub seed: u64,
    /// Transport send buffer per direction.
    #[serde(default = "default_buffer")]
    pub buffer_bytes: usize,
}

impl NetProfile {
    pub fn constant(bandwidth_bps: f64, base_delay_ms: f64) -> Self {
        Self {
            bandwidth_bps,
            burst_bytes: DEFAULT_BURST_BYTES,
            base_delay_ms,
            dropout_windows: Vec::new(),
            degradation: None,
            seed: 0,
            buffer_bytes: DEFAULT_BUFFER_BYTES,
        }
    }

    pub fn with_dropout(mut self, start_s: f64, end_s: f64) -> Self {
        self.dropout_windows.push((start_s, end_s));
        self
    }

    pub fn with_ramp(mut self, start_bps: f64, end_bps: f64, start_s: f64, end_s: f64) -> Self {
        self.degradation = Some(Degradation {
            start_bps,
            end_bps,
            start_s,
            end_s,
        });
        self
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let positive = |v: f64, name| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ProfileError::NotPositive(name))
            }
        };
        positive(self.bandwidth_bps, "bandwidth_bps")?;
        if self.burst_bytes == 0 {
            return Err(ProfileError::NotPositive("burst_bytes"));
        }
        if self.buffer_bytes == 0 {
            return Err(ProfileError::NotPositive("buffer_bytes"));
        }
        if !(self.base_delay_ms >= 0.0 && self.base_delay_ms.is_finite()) {
            return Err(ProfileError::Negative("base_delay_ms"));
        }
        let mut windows = self.dropout_windows.clone();
        windows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(a, b) in &windows {
            if !(a < b && a.is_finite() && b.is_finite() && a >= 0.0) {
                return Err(ProfileError::BadWindow(a, b));
            }
        }
        if windows.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(ProfileError::OverlappingWindows);
        }
        if let Some(d) = &self.degradation {
            positive(d.start_bps, "degradation.start_bps")?;
            positive(d.end_bps, "degradation.end_bps")?;
            if !(d.start_s < d.end_s && d.start_s >= 0.0 && d.end_s.is_finite()) {
                return Err(ProfileError::BadRamp);
            }
        }
        Ok(())
    }

    pub fn base_delay_s(&self) -> f64 {
        self.base_delay_ms / 1e3
    }

    fn in_dropout(&self, t: f64) -> Option<f64> {
        self.dropout_windows
            .iter()
            .find(|&&(a, b)| a <= t && t < b)
            .map(|&(_, b)| b)
    }

    /// Bandwidth ignoring dropouts.
    fn shaped_rate(&self, t: f64) -> f64 {
        match &self.degradation {
            Some(d) if t >= d.end_s => d.end_bps,
            Some(d) if t >= d.start_s => {
                let frac = (t - d.start_s) / (d.end_s - d.start_s);
                d.start_bps + (d.end_bps - d.start_bps) * frac
            }
            _ => self.bandwidth_bps,
        }
    }

    pub fn bandwidth_at(&self, t: f64) -> f64 {
        if self.in_dropout(t).is_some() {
            0.0
        } else {
            self.shaped_rate(t)
        }
    }

    /// Piece of the rate function starting at `t`: rate at `t`, slope in
    /// bps per second, and where the piece ends.
    fn segment(&self, t: f64) -> (f64, f64, f64) {
        let mut end = f64::INFINITY;
        let mut consider = |b: f64| {
            if b > t && b < end {
                end = b;
            }
        };
        for &(a, b) in &self.dropout_windows {
            consider(a);
            consider(b);
        }
        if let Some(d) = &self.degradation {
            consider(d.start_s);
            consider(d.end_s);
        }
        if self.in_dropout(t).is_some() {
            return (0.0, 0.0, end);
        }
        let slope = match &self.degradation {
            Some(d) if t >= d.start_s && t < d.end_s => {
                (d.end_bps - d.start_bps) / (d.end_s - d.start_s)
            }
            _ => 0.0,
        };
        (self.shaped_rate(t), slope, end)
    }

    /// Bits the link can carry over `[t0, t1]`.
    pub fn bits_between(&self, t0: f64, t1: f64) -> f64 {
        let mut t = t0;
        let mut bits = 0.0;
        while t < t1 {
            let (rate, slope, end) = self.segment(t);
            let dt = end.min(t1) - t;
            bits += rate * dt + 0.5 * slope * dt * dt;
            t = end;
        }
        bits
    }

    /// Earliest time at which `bits` have been carried starting from `t0`.
    pub fn time_to_send(&self, t0: f64, bits: f64) -> f64 {
        let mut t = t0;
        let mut remaining = bits;
        if remaining <= 0.0 {
            return t;
        }
        loop {
            let (rate, slope, end) = self.segment(t);
            let dt = end - t;
            let capacity = if dt.is_finite() {
                rate * dt + 0.5 * slope * dt * dt
            } else {
                f64::INFINITY
            };
            if capacity >= remaining {
                // root of slope/2 x^2 + rate x - remaining, cancellation-free form
                let disc = (rate * rate + 2.0 * slope * remaining).max(0.0);
                let x = 2.0 * remaining / (rate + disc.sqrt());
                return t + x.min(dt);
            }
            remaining -= capacity;
            t = end;
        }
    }

    /// First instant at or after `t` with nonzero bandwidth.
    fn next_active(&self, mut t: f64) -> f64 {
        while let Some(end) = self.in_dropout(t) {
            t = end;
        }
        t
    }

    pub fn serialization_delay(&self, frame_bytes: usize, t: f64) -> f64 {
        self.time_to_send(t, frame_bytes as f64 * 8.0) - t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transmit {
    /// Accepted; the frame reaches the far end at this time.
    Deliver { at: f64 },
    /// Buffer full; retry at this time.
    BlockedUntil { t: f64 },
}

#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct LinkStats {
    pub frames: u64,
    pub bytes: u64,
    pub blocked_writes: u64,
}

/// One direction of a shaped connection.
#[derive(Debug, Clone)]
pub struct Link {
    profile: NetProfile,
    tokens: f64,
    busy_until: f64,
    // serialization finish time and size of each frame still in the buffer
    buffered: VecDeque<(f64, usize)>,
    buffered_bytes: usize,
    last_submit: f64,
    stats: LinkStats,
}

impl Link {
    /// The bucket starts empty at t = 0 and refills while the link idles.
    pub fn new(profile: NetProfile) -> Self {
        Self {
            profile,
            tokens: 0.0,
            busy_until: 0.0,
            buffered: VecDeque::new(),
            buffered_bytes: 0,
            last_submit: 0.0,
            stats: LinkStats::default(),
        }
    }

    pub fn profile(&self) -> &NetProfile {
        &self.profile
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    pub fn buffered_bytes(&self, now: f64) -> usize {
        self.buffered
            .iter()
            .filter(|(finish, _)| *finish > now)
            .map(|(_, b)| b)
            .sum()
    }

    fn drain_buffer(&mut self, now: f64) {
        while let Some(&(finish, bytes)) = self.buffered.front() {
            if finish > now {
                break;
            }
            self.buffered.pop_front();
            self.buffered_bytes -= bytes;
        }
    }

    /// Submit times must be non-decreasing.
    pub fn link_transmit(&mut self, frame_bytes: usize, submit: f64) -> Transmit {
        debug_assert!(submit >= self.last_submit, "link time went backwards");
        self.last_submit = submit;
        self.drain_buffer(submit);

        let cap = self.profile.buffer_bytes;
        if self.buffered_bytes > 0 && self.buffered_bytes + frame_bytes > cap {
            let mut left = self.buffered_bytes;
            let mut until = submit;
            for &(finish, bytes) in &self.buffered {
                left -= bytes;
                until = finish;
                if left + frame_bytes <= cap {
                    break;
                }
            }
            self.stats.blocked_writes += 1;
            return Transmit::BlockedUntil { t: until };
        }

        let bits = frame_bytes as f64 * 8.0;
        let finish = if submit >= self.busy_until {
            let refill = self.profile.bits_between(self.busy_until, submit) / 8.0;
            self.tokens = (self.tokens + refill).min(self.profile.burst_bytes as f64);
            let start = self.profile.next_active(submit);
            let from_bucket = self.tokens.min(frame_bytes as f64);
            self.tokens -= from_bucket;
            self.profile.time_to_send(start, bits - from_bucket * 8.0)
        } else {
            self.profile.time_to_send(self.busy_until, bits)
        };
        self.busy_until = finish;
        self.buffered.push_back((finish, frame_bytes));
        self.buffered_bytes += frame_bytes;
        self.stats.frames += 1;
        self.stats.bytes += frame_bytes as u64;
        Transmit::Deliver {
            at: finish + self.profile.base_delay_s(),
        }
    }
}

/// Shared virtual clock, in microseconds.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    now_us: u64,
}

impl SimClock {
    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn now_s(&self) -> f64 {
        self.now_us as f64 / 1e6
    }

    pub fn advance_to(&mut self, t_us: u64) {
        assert!(t_us >= self.now_us, "virtual time is monotonic");
        self.now_us = t_us;
    }
}

pub fn secs_to_us(t: f64) -> u64 {
    (t * 1e6).ceil() as u64
}

/// Time-ordered event queue; equal times pop in insertion order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(u64, u64, usize)>>,
    slots: Vec<Option<E>>,
    free: Vec<usize>,
    seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            slots: Vec::new(),
            free: Vec::new(),
            seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, at_us: u64, event: E) {
        let slot = match self.free.pop() {
            Some(i) => {
                self.slots[i] = Some(event);
                i
            }
            None => {
                self.slots.push(Some(event));
                self.slots.len() - 1
            }
        };
        self.heap.push(Reverse((at_us, self.seq, slot)));
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        let Reverse((at, _, slot)) = self.heap.pop()?;
        self.free.push(slot);
        Some((at, self.slots[slot].take().expect("slot filled on push")))
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse((t, _, _))| *t)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9 * a.abs().max(1.0)
    }

    #[test]
    fn serialization_delay_of_one_frame() {
        let mut link = Link::new(NetProfile::constant(12e6, 0.0));
        let Transmit::Deliver { at } = link.link_transmit(75_000, 0.0) else {
            panic!("blocked")
        };
        assert!(close(at, 0.050), "{at}");
        assert!(close(link.profile().serialization_delay(75_000, 3.0), 0.050));
    }

    #[test]
    fn ramp_interpolation() {
        let p = NetProfile::constant(100e6, 0.0).with_ramp(100e6, 4e6, 0.0, 15.0);
        assert!(close(p.bandwidth_at(7.5), 52e6));
        let p = NetProfile::constant(10e6, 0.0).with_ramp(10e6, 0.4e6, 0.0, 15.0);
        assert!(close(p.bandwidth_at(15.0), 0.4e6));
        assert!(close(p.bandwidth_at(40.0), 0.4e6));
        assert_eq!(NetProfile::constant(3e6, 0.0).bandwidth_at(123.0), 3e6);
    }

    #[test]
    fn dropout_stalls_link() {
        let p = NetProfile::constant(1e6, 0.0).with_dropout(5.0, 7.0);
        assert_eq!(p.bandwidth_at(6.0), 0.0);
        assert_eq!(p.bandwidth_at(7.0), 1e6);
        let mut link = Link::new(p);
        let Transmit::Deliver { at } = link.link_transmit(1, 5.5) else {
            panic!()
        };
        // the bucket may pre-pay the byte, but nothing moves before the window ends
        assert!((7.0..=7.0 + 8e-6).contains(&at), "{at}");
    }

    #[test]
    fn integral_matches_inverse() {
        let p = NetProfile::constant(10e6, 0.0)
            .with_ramp(10e6, 0.4e6, 1.0, 15.0)
            .with_dropout(3.0, 4.5);
        for &(t0, bits) in &[(0.0, 1e6), (0.5, 3e7), (2.9, 1e5), (3.2, 5e6), (14.0, 2e6)] {
            let t1 = p.time_to_send(t0, bits);
            assert!(close(p.bits_between(t0, t1), bits), "{t0} {bits}");
        }
    }

    #[test]
    fn fifo_queueing_and_base_delay() {
        let mut p = NetProfile::constant(8e6, 10.0);
        p.buffer_bytes = 2_000_000;
        let mut link = Link::new(p);
        let Transmit::Deliver { at: a } = link.link_transmit(1_000_000, 0.0) else {
            panic!()
        };
        let Transmit::Deliver { at: b } = link.link_transmit(1_000, 0.1) else {
            panic!()
        };
        assert!(close(a, 1.01));
        assert!(close(b, 1.011));
    }

    #[test]
    fn full_buffer_blocks_writer() {
        let mut p = NetProfile::constant(8e3, 0.0);
        p.buffer_bytes = 2_000;
        let mut link = Link::new(p);
        assert!(matches!(link.link_transmit(1_000, 0.0), Transmit::Deliver { .. }));
        assert!(matches!(link.link_transmit(1_000, 0.0), Transmit::Deliver { .. }));
        let Transmit::BlockedUntil { t } = link.link_transmit(500, 0.0) else {
            panic!()
        };
        assert!(close(t, 1.0));
        assert!(matches!(link.link_transmit(500, t), Transmit::Deliver { .. }));
        assert_eq!(link.stats().blocked_writes, 1);
    }

    #[test]
    fn idle_link_accrues_burst() {
        let mut p = NetProfile::constant(8e3, 0.0);
        p.burst_bytes = 500;
        let mut link = Link::new(p);
        let Transmit::Deliver { at } = link.link_transmit(400, 10.0) else {
            panic!()
        };
        assert_eq!(at, 10.0);
        let Transmit::Deliver { at } = link.link_transmit(1_000, 10.0) else {
            panic!()
        };
        assert!(close(at, 10.9), "{at}");
    }

    #[test]
    fn profile_validation() {
        assert!(NetProfile::constant(0.0, 0.0).validate().is_err());
        assert!(NetProfile::constant(1.0, -1.0).validate().is_err());
        let p = NetProfile::constant(1.0, 0.0).with_dropout(1.0, 3.0).with_dropout(2.0, 4.0);
        assert_eq!(p.validate(), Err(ProfileError::OverlappingWindows));
        let p = NetProfile::constant(1.0, 0.0).with_dropout(3.0, 3.0);
        assert!(matches!(p.validate(), Err(ProfileError::BadWindow(..))));
        let p = NetProfile::constant(1.0, 0.0).with_ramp(1.0, 1.0, 5.0, 1.0);
        assert_eq!(p.validate(), Err(ProfileError::BadRamp));
    }

    #[test]
    fn event_queue_orders_by_time_then_insertion() {
        let mut q = EventQueue::default();
        q.push(5, "b");
        q.push(1, "a");
        q.push(5, "c");
        assert_eq!(q.pop(), Some((1, "a")));
        assert_eq!(q.pop(), Some((5, "b")));
        assert_eq!(q.pop(), Some((5, "c")));
        assert!(q.pop().is_none());
    }
}
