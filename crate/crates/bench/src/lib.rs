//! Benchmark fixtures.

use l4sim::net::{Direction, DEFAULT_MSS};
use l4sim::{DualPi2, DualPi2Config, IpEcn, Packet, ScenarioConfig, SimTime, TcpHeader};

/// A preset cut down to `secs` simulated seconds and a single replication.
pub fn short_scenario(preset: &str, secs: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::preset(preset).expect("known preset");
    cfg.duration = SimTime::from_secs(secs);
    cfg.warmup = SimTime::ZERO;
    cfg.runs = 1;
    cfg
}

/// Full-size data segments alternating between the two queues.
pub fn mixed_packets(n: usize) -> Vec<Packet> {
    (0..n)
        .map(|i| {
            let ecn = if i % 2 == 0 { IpEcn::Ect1 } else { IpEcn::Ect0 };
            Packet::new(
                i % 2,
                Direction::Downlink,
                DEFAULT_MSS,
                TcpHeader::default(),
                ecn,
            )
        })
        .collect()
}

/// An AQM already holding some coupled probability, so dequeues exercise
/// the marking paths.
pub fn warm_aqm() -> DualPi2 {
    let mut q = DualPi2::new(DualPi2Config::default());
    q.set_p_prime(0.05);
    q
}
