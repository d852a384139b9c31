//! Latency, throughput and dropout-recovery metrics over delivery records.

use serde::{Deserialize, Serialize};

/// One DATA frame observed by one consumer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub topic: String,
    pub seq: u64,
    /// When the producer generated the message.
    pub send_timestamp_us: u64,
    pub receive_timestamp_us: u64,
    pub consumer: usize,
    pub payload_bytes: usize,
}

impl MessageRecord {
    pub fn latency_us(&self) -> u64 {
        self.receive_timestamp_us.saturating_sub(self.send_timestamp_us)
    }
}

/// A recovered latency must stay under this multiple of the pre-dropout median.
pub const RECOVERY_FACTOR: f64 = 2.0;
/// ...for at least this long.
pub const RECOVERY_HOLD_US: u64 = 1_000_000;
pub const BIN_US: u64 = 1_000_000;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    /// `(receive time, latency)` per record, in record order.
    pub latency_series_us: Vec<(u64, u64)>,
    /// Deliveries per 1 s bin of receive time, all consumers summed.
    pub throughput: Vec<f64>,
    pub median_latency_us: Option<u64>,
    pub p95_latency_us: Option<u64>,
    pub max_latency_us: Option<u64>,
    pub mean_throughput: f64,
    pub recovery_time_s: Option<f64>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn compute_metrics(records: &[MessageRecord], dropout_windows: &[(f64, f64)]) -> Metrics {
    if records.is_empty() {
        return Metrics::default();
    }
    let latency_series_us: Vec<(u64, u64)> = records
        .iter()
        .map(|r| (r.receive_timestamp_us, r.latency_us()))
        .collect();
    let mut sorted: Vec<u64> = latency_series_us.iter().map(|&(_, l)| l).collect();
    sorted.sort_unstable();

    let last_bin = latency_series_us.iter().map(|&(t, _)| t / BIN_US).max().unwrap_or(0);
    let mut throughput = vec![0.0; last_bin as usize + 1];
    for &(t, _) in &latency_series_us {
        throughput[(t / BIN_US) as usize] += 1.0;
    }
    let mean_throughput = throughput.iter().sum::<f64>() / throughput.len() as f64;

    let recovery_time_s = dropout_windows
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .and_then(|&window| recovery_time(&latency_series_us, window));

    Metrics {
        median_latency_us: percentile(&sorted, 0.5),
        p95_latency_us: percentile(&sorted, 0.95),
        max_latency_us: sorted.last().copied(),
        latency_series_us,
        throughput,
        mean_throughput,
        recovery_time_s,
    }
}

/// Seconds from the end of the dropout window until the first delivery
/// after which latency stays below twice the pre-dropout median, provided
/// that stable tail lasts at least [`RECOVERY_HOLD_US`].
pub fn recovery_time(series: &[(u64, u64)], (start_s, end_s): (f64, f64)) -> Option<f64> {
    let start_us = (start_s * 1e6) as u64;
    let end_us = (end_s * 1e6) as u64;

    let mut before: Vec<u64> = series
        .iter()
        .filter(|&&(t, _)| t < start_us)
        .map(|&(_, l)| l)
        .collect();
    before.sort_unstable();
    let threshold = RECOVERY_FACTOR * percentile(&before, 0.5)? as f64;

    let mut after: Vec<(u64, u64)> = series.iter().copied().filter(|&(t, _)| t >= end_us).collect();
    after.sort_by_key(|&(t, _)| t);
    let last_bad = after.iter().rposition(|&(_, l)| l as f64 >= threshold);
    let first_good = last_bad.map_or(0, |i| i + 1);
    let &(recovered_at, _) = after.get(first_good)?;
    let &(last_seen, _) = after.last()?;
    if last_seen - recovered_at < RECOVERY_HOLD_US {
        return None;
    }
    Some((recovered_at - end_us) as f64 / 1e6)
}
