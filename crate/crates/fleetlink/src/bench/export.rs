//! CSV export. Files are UTF-8 with LF line endings and a fixed column order.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchError, MessageRecord, ScenarioResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LatencyRow {
    msg_index: usize,
    topic: String,
    consumer: usize,
    send_us: u64,
    recv_us: u64,
    latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub topology: String,
    pub consumers: usize,
    pub median_latency_ms: Option<f64>,
    pub p95_latency_ms: Option<f64>,
    pub max_latency_ms: Option<f64>,
    pub mean_throughput: f64,
    pub drops: u64,
    pub producer_egress_bytes: u64,
    pub recovery_s: Option<f64>,
    pub scenario: String,
}

fn ms(us: Option<u64>) -> Option<f64> {
    us.map(|v| v as f64 / 1000.0)
}

pub fn summary_row(r: &ScenarioResult) -> SummaryRow {
    SummaryRow {
        policy: r.policy.to_string(),
        topology: r.topology.to_string(),
        consumers: r.consumer_count,
        median_latency_ms: ms(r.metrics.median_latency_us),
        p95_latency_ms: ms(r.metrics.p95_latency_us),
        max_latency_ms: ms(r.metrics.max_latency_us),
        mean_throughput: r.metrics.mean_throughput,
        drops: r.drops(),
        producer_egress_bytes: r.producer_egress_bytes,
        recovery_s: r.metrics.recovery_time_s,
        scenario: r.name.clone(),
    }
}

const LATENCY_COLUMNS: [&str; 6] = ["msg_index", "topic", "consumer", "send_us", "recv_us", "latency_ms"];
const SUMMARY_COLUMNS: [&str; 11] = [
    "policy",
    "topology",
    "consumers",
    "median_latency_ms",
    "p95_latency_ms",
    "max_latency_ms",
    "mean_throughput",
    "drops",
    "producer_egress_bytes",
    "recovery_s",
    "scenario",
];

/// The header is written even when no rows follow.
fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>, BenchError> {
    let file = File::create(path).map_err(|e| io_context(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    w.write_record(header)?;
    Ok(w)
}

fn io_context(path: &Path, e: std::io::Error) -> BenchError {
    BenchError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Writes `<dir>/<name>_latency.csv` and `<dir>/<name>_summary.csv`.
pub fn export_csv(r: &ScenarioResult, dir: &Path) -> Result<(PathBuf, PathBuf), BenchError> {
    let latency = write_latency_csv(r, dir)?;
    let summary = dir.join(format!("{}_summary.csv", r.name));
    write_summary_csv(&[summary_row(r)], &summary)?;
    Ok((latency, summary))
}

/// Writes `<dir>/<name>_latency.csv` and returns its path.
pub fn write_latency_csv(r: &ScenarioResult, dir: &Path) -> Result<PathBuf, BenchError> {
    let path = dir.join(format!("{}_latency.csv", r.name));
    let mut w = writer(&path, &LATENCY_COLUMNS)?;
    for (msg_index, rec) in r.records.iter().enumerate() {
        w.serialize(LatencyRow {
            msg_index,
            topic: rec.topic.clone(),
            consumer: rec.consumer,
            send_us: rec.send_timestamp_us,
            recv_us: rec.receive_timestamp_us,
            latency_ms: rec.latency_us() as f64 / 1000.0,
        })?;
    }
    w.flush().map_err(|e| io_context(&path, e))?;
    Ok(path)
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<(), BenchError> {
    let mut w = writer(path, &SUMMARY_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| io_context(path, e))?;
    Ok(())
}

/// Reads records back from a latency CSV. Sequence numbers and payload
/// sizes are not stored and come back as zero.
pub fn read_latency_csv(path: &Path) -> Result<Vec<MessageRecord>, BenchError> {
    let file = File::open(path).map_err(|e| io_context(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: LatencyRow = row?;
        out.push(MessageRecord {
            topic: row.topic,
            seq: 0,
            send_timestamp_us: row.send_us,
            receive_timestamp_us: row.recv_us,
            consumer: row.consumer,
            payload_bytes: 0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{run_scenario, Policy, PublisherSpec, Scenario};
    use super::*;
    use crate::netsim::NetProfile;

    #[test]
    fn latency_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario::new(
            "rt",
            Policy::Scheduled,
            NetProfile::constant(1e6, 5.0),
            vec![PublisherSpec::new("/a", 2000, 20.0, 3.0)],
        );
        let r = run_scenario(&s).unwrap();
        let path = write_latency_csv(&r, dir.path()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("msg_index,topic,consumer,send_us,recv_us,latency_ms\n"));
        assert!(!text.contains('\r'));

        let back = read_latency_csv(&path).unwrap();
        assert_eq!(back.len(), r.records.len());
        let recomputed = super::super::compute_metrics(&back, &[]);
        assert_eq!(recomputed.median_latency_us, r.metrics.median_latency_us);
        assert_eq!(recomputed.throughput, r.metrics.throughput);
    }

    #[test]
    fn summary_header_order() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario::new(
            "sum",
            Policy::Naive,
            NetProfile::constant(1e6, 5.0),
            vec![PublisherSpec::new("/a", 100, 5.0, 1.0)],
        );
        let row = summary_row(&run_scenario(&s).unwrap());
        let path = dir.path().join("s.csv");
        write_summary_csv(&[row], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "policy,topology,consumers,median_latency_ms,p95_latency_ms,max_latency_ms,\
             mean_throughput,drops,producer_egress_bytes,recovery_s,scenario"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("naive,relay,1,"));
        assert!(text.ends_with(",sum\n"));
    }

    #[test]
    fn empty_result_gives_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario::new(
            "quiet",
            Policy::Scheduled,
            NetProfile::constant(1e6, 5.0).with_dropout(0.0, 1000.0),
            vec![PublisherSpec::new("/a", 100, 1.0, 1.0)],
        );
        let mut r = run_scenario(&s).unwrap();
        r.records.clear();
        let (latency, _) = export_csv(&r, dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(latency).unwrap().lines().count(), 1);
    }

    #[test]
    fn io_errors_name_the_path() {
        let s = Scenario::new(
            "x",
            Policy::Naive,
            NetProfile::constant(1e6, 5.0),
            vec![PublisherSpec::new("/a", 100, 1.0, 1.0)],
        );
        let r = run_scenario(&s).unwrap();
        let err = export_csv(&r, Path::new("/nonexistent/dir")).unwrap_err().to_string();
        assert!(err.contains("/nonexistent/dir/x_latency.csv"), "{err}");
    }
}
