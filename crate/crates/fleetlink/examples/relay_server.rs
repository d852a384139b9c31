//! The sans-IO relay: authentication, subscriptions, authorized fan-out
//! and PONG acknowledgements, without any sockets.

use fleetlink::server::{AuthMap, AuthRule, Op, PrincipalConfig, Relay};
use fleetlink::wire::{HelloBody, MessageEnvelope, SubscriptionAction, SubscriptionBody};

fn principal(identity: &str, rules: Vec<AuthRule>) -> PrincipalConfig {
    PrincipalConfig {
        identity: identity.into(),
        secret: format!("{identity}-secret"),
        rules,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let auth = AuthMap::new(&[
        principal("r1", vec![AuthRule::new("/r1/.*", Op::Send)]),
        principal("ops", vec![AuthRule::new(".*", Op::Receive)]),
        principal("guest", vec![AuthRule::new("/r1/status", Op::Receive)]),
    ])?;
    let mut relay = Relay::new(auth);
    let hello = |who: &str| MessageEnvelope::hello(&HelloBody::new(who, format!("{who}-secret")).unwrap(), 0);
    let sub = |re: &str| {
        MessageEnvelope::subscription(
            &SubscriptionBody {
                action: SubscriptionAction::Subscribe,
                topic_regex: re.into(),
            },
            0,
        )
    };

    let robot = relay.open_connection();
    let ops = relay.open_connection();
    let guest = relay.open_connection();
    for (conn, who) in [(robot, "r1"), (ops, "ops"), (guest, "guest")] {
        relay.handle_frame(hello(who), conn);
    }
    relay.handle_frame(sub("/r1/.*"), ops);
    relay.handle_frame(sub("/r1/.*"), guest);

    for topic in ["/r1/camera", "/r1/status"] {
        let out = relay.handle_frame(MessageEnvelope::data(topic, "t", 1, 0, vec![1, 2, 3]), robot);
        let to: Vec<String> = out.outbound.iter().map(|(c, e)| format!("{c} {:?}", e.kind)).collect();
        println!("{topic} -> {to:?}");
    }
    let pong = relay.handle_frame(MessageEnvelope::ping(2, 0), robot);
    println!("ping -> {:?}", pong.outbound.iter().map(|(c, e)| (c.to_string(), e.kind, e.seq)).collect::<Vec<_>>());

    let out = relay.handle_frame(MessageEnvelope::data("/r2/camera", "t", 3, 0, vec![]), robot);
    println!("send outside its scope -> close: {:?}", out.close);

    let intruder = relay.open_connection();
    let out = relay.handle_frame(MessageEnvelope::hello(&HelloBody::new("r1", "wrong")?, 0), intruder);
    println!("bad secret -> close: {:?}", out.close);
    println!("{:?}", relay.stats());
    Ok(())
}
