//! A 3 s link dropout: the scheduler keeps one frame in flight and
//! recovers right after the link returns, while unscheduled publishing
//! leaves a backlog that takes many seconds to clear.

use fleetlink::bench::{run_scenario, Encoding, Policy, PublisherSpec, Scenario};
use fleetlink::netsim::NetProfile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let profile = NetProfile::constant(2e6, 5.0).with_dropout(5.0, 8.0);
    let camera = PublisherSpec::new("/camera", 20_000, 10.0, 30.0);
    println!("{:<22} {:>10} {:>10} {:>8} {:>10}", "policy", "median_ms", "max_ms", "drops", "recovery_s");
    for (policy, encoding) in [
        (Policy::Scheduled, Encoding::Binary),
        (Policy::NoDropAll, Encoding::Binary),
        (Policy::Naive, Encoding::Binary),
        (Policy::Naive, Encoding::Json),
    ] {
        let mut s = Scenario::new("dropout", policy, profile.clone(), vec![camera.clone()]);
        s.encoding = Some(encoding);
        s.drain_s = 120.0;
        let r = run_scenario(&s)?;
        let ms = |v: Option<u64>| v.map_or("-".into(), |v| format!("{:.1}", v as f64 / 1e3));
        println!(
            "{:<22} {:>10} {:>10} {:>8} {:>10}",
            format!("{policy}/{encoding:?}").to_lowercase(),
            ms(r.metrics.median_latency_us),
            ms(r.metrics.max_latency_us),
            r.drops(),
            r.metrics.recovery_time_s.map_or("never".into(), |v| format!("{v:.2}")),
        );
    }
    Ok(())
}
