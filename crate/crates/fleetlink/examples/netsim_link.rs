//! A simulated link: serialization at the current bandwidth, propagation
//! delay, a dropout window that stalls traffic and a bounded send buffer.

use fleetlink::netsim::{Link, NetProfile, Transmit};

fn main() {
    let profile = NetProfile::constant(2e6, 5.0).with_dropout(1.0, 2.0);
    let mut link = Link::new(profile.clone());
    println!("20 kB at 2 Mbit/s takes {:.1} ms to serialize", profile.serialization_delay(20_000, 0.0) * 1e3);

    for submit in [0.0, 0.5, 0.95, 1.5, 2.5] {
        match link.link_transmit(20_000, submit) {
            Transmit::Deliver { at } => println!("submit {submit:>4.2} s -> delivered {at:.4} s"),
            Transmit::BlockedUntil { t } => println!("submit {submit:>4.2} s -> blocked until {t:.4} s"),
        }
    }

    // fill the 256 KiB buffer during a dropout
    let mut stalled = Link::new(NetProfile::constant(1e6, 0.0).with_dropout(0.0, 10.0));
    let mut accepted = 0;
    while let Transmit::Deliver { .. } = stalled.link_transmit(16_384, 0.0) {
        accepted += 1;
    }
    println!("{accepted} frames of 16 KiB buffered before the writer blocks");

    let ramp = NetProfile::constant(10e6, 0.0).with_ramp(10e6, 0.4e6, 0.0, 15.0);
    for t in [0.0, 5.0, 10.0, 15.0, 20.0] {
        println!("ramp bandwidth at {t:>4} s: {:.2} Mbit/s", ramp.bandwidth_at(t) / 1e6);
    }
    println!("{:?}", link.stats());
}
