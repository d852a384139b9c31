//! Runs every scenario in a suite file and prints one summary line per run.
//!
//!     cargo run --release --example scenario_suite -- scenarios/fanout.toml

use std::path::PathBuf;

use fleetlink::bench::{run_scenario, summary_row, ScenarioSuite};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/dropout.toml")));
    let suite = ScenarioSuite::load(&path)?;
    println!(
        "{:<36} {:>9} {:>9} {:>9} {:>7} {:>6} {:>11} {:>9}",
        "run", "med_ms", "p95_ms", "max_ms", "thr/s", "drops", "egress_B", "recov_s"
    );
    for scenario in suite.expand()? {
        let r = run_scenario(&scenario)?;
        let row = summary_row(&r);
        let f = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.1}"));
        println!(
            "{:<36} {:>9} {:>9} {:>9} {:>7.2} {:>6} {:>11} {:>9}",
            row.scenario,
            f(row.median_latency_ms),
            f(row.p95_latency_ms),
            f(row.max_latency_ms),
            row.mean_throughput,
            row.drops,
            row.producer_egress_bytes,
            row.recovery_s.map_or("-".to_owned(), |v| format!("{v:.2}")),
        );
    }
    Ok(())
}
