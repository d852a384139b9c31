//! One producer, 1 to 8 consumers. Through the relay the producer uplink
//! carries each frame once; peer-to-peer it carries one copy per consumer.

use fleetlink::bench::{run_scenario, Policy, PublisherSpec, Scenario, Topology};
use fleetlink::netsim::NetProfile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let profile = NetProfile::constant(1.2e6, 5.0);
    let camera = PublisherSpec::new("/camera", 50_000, 5.0, 10.0);
    println!("{:>9} {:>10} {:>14} {:>12}", "consumers", "topology", "uplink_bytes", "median_ms");
    for n in [1usize, 2, 4, 8] {
        for (policy, topology) in [(Policy::Scheduled, Topology::Relay), (Policy::Naive, Topology::PeerToPeer)] {
            let mut s = Scenario::new("fanout", policy, profile.clone(), vec![camera.clone()]);
            s.topology = topology;
            s.consumer_count = n;
            s.drain_s = 600.0;
            let r = run_scenario(&s)?;
            println!(
                "{:>9} {:>10} {:>14} {:>12.1}",
                n,
                topology.to_string(),
                r.producer_egress_bytes,
                r.metrics.median_latency_us.unwrap_or(0) as f64 / 1e3
            );
        }
    }
    Ok(())
}
