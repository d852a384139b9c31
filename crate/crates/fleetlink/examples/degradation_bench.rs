//! Bandwidth ramps from 10 Mbit/s down to 0.4 Mbit/s over 15 s. Prints
//! latency per second of publish time for the scheduler and the naive JSON
//! bridge.

use fleetlink::bench::{run_scenario, Policy, PublisherSpec, Scenario};
use fleetlink::netsim::NetProfile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let profile = NetProfile::constant(10e6, 5.0).with_ramp(10e6, 0.4e6, 0.0, 15.0);
    let camera = PublisherSpec::new("/camera", 20_000, 10.0, 15.0);
    let mut runs = Vec::new();
    for policy in [Policy::Scheduled, Policy::Naive] {
        let mut s = Scenario::new("degradation", policy, profile.clone(), vec![camera.clone()]);
        s.drain_s = 120.0;
        runs.push((policy, run_scenario(&s)?));
    }
    println!("{:>4} {:>8} {:>16} {:>16}", "t_s", "Mbit/s", "scheduled_max_ms", "naive_max_ms");
    for sec in 0..15u64 {
        let worst = |r: &fleetlink::bench::ScenarioResult| {
            r.records
                .iter()
                .filter(|m| m.send_timestamp_us / 1_000_000 == sec)
                .map(|m| m.latency_us())
                .max()
                .map_or("-".into(), |v| format!("{:.0}", v as f64 / 1e3))
        };
        println!(
            "{:>4} {:>8.2} {:>16} {:>16}",
            sec,
            profile.bandwidth_at(sec as f64) / 1e6,
            worst(&runs[0].1),
            worst(&runs[1].1)
        );
    }
    for (policy, r) in &runs {
        println!("{policy}: delivered {}/{} p95 {:?} us", r.delivered(), r.published(), r.metrics.p95_latency_us);
    }
    Ok(())
}
