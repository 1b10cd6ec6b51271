//! One replication of a dumbbell scenario.
//!
//! Every flow has a server (the data sender) behind the right router and a
//! client behind the left one. Data crosses the bottleneck right to left
//! through DualPI2; ACKs come back through a plain drop-tail queue.

use crate::cc::CongestionControl;
use crate::config::{CcaKind, ScenarioConfig};
use crate::cubic::Cubic;
use crate::dualpi2::{DropTail, DualPi2, ProbabilitySample, QueueId, QueueStats};
use crate::error::MetricsError;
use crate::metrics::{jain_index, BinMode, Binner, FlowSummary, RunSummary, TimeSeries};
use crate::net::{build_dumbbell, Direction, Link, Packet, TcpFlags};
use crate::prague::Prague;
use crate::sim::{RngStream, Scheduler, SimTime};
use crate::tcp::{Outbox, TcpReceiver, TcpSender, TimerKind};

const AQM_STREAM: u32 = 0;
const START_STREAM: u32 = 1;
/// Hops on a path: sender access link, bottleneck, receiver access link.
const PATH_HOPS: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Server,
    Client,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PortId {
    /// `far` is the access link at the destination end of the path.
    Access {
        flow: usize,
        dir: Direction,
        far: bool,
    },
    BottleneckDown,
    BottleneckUp,
}

#[derive(Debug)]
enum Event {
    PortFree(PortId),
    /// `pkt.hop` says which port of its path it reaches next.
    Arrive(Packet),
    Timer {
        flow: usize,
        side: Side,
        kind: TimerKind,
    },
    Pi2Update,
    FlowStart(usize),
    FlowStop(usize),
}

enum Queue {
    Fifo(DropTail),
    Aqm(Box<DualPi2>),
}

struct Port {
    link: Link,
    queue: Queue,
    busy: bool,
}

impl Port {
    fn fifo(rate: u64, delay: SimTime, limit: u64) -> Self {
        Port {
            link: Link::new(rate, delay),
            queue: Queue::Fifo(DropTail::new(limit)),
            busy: false,
        }
    }
}

/// Per-flow collectors.
struct FlowProbe {
    throughput: Binner,
    rtt: Binner,
    cwnd: Binner,
    marks: Binner,
    delivered_steady: u64,
    rtt_sum: f64,
    rtt_n: u64,
    marks_steady: u64,
    last_delivered: u64,
}

impl FlowProbe {
    fn new(interval: SimTime) -> Self {
        FlowProbe {
            throughput: Binner::new(interval, BinMode::Rate),
            rtt: Binner::new(interval, BinMode::Mean),
            cwnd: Binner::new(interval, BinMode::Mean),
            marks: Binner::new(interval, BinMode::Rate),
            delivered_steady: 0,
            rtt_sum: 0.0,
            rtt_n: 0,
            marks_steady: 0,
            last_delivered: 0,
        }
    }
}

pub struct Flow {
    pub label: String,
    pub sender: TcpSender,
    pub receiver: TcpReceiver,
    probe: FlowProbe,
}

/// Everything a replication produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    /// Fixed-interval series, named `<flow>_<metric>` or `<queue>_<metric>`.
    pub series: Vec<TimeSeries>,
    /// Every PI update in order.
    pub probabilities: Vec<ProbabilitySample>,
    pub l4s_stats: QueueStats,
    pub classic_stats: QueueStats,
    pub events: u64,
}

pub struct World {
    cfg: ScenarioConfig,
    run_number: u32,
    sched: Scheduler<Event>,
    aqm_rng: RngStream,
    flows: Vec<Flow>,
    access: Vec<[Port; 4]>,
    down: Port,
    up: Port,
    outbox: Outbox,
    sojourn_l: Binner,
    sojourn_c: Binner,
    sojourn_steady: [(f64, u64); 2],
    probabilities: Vec<ProbabilitySample>,
    events: u64,
}

fn make_cca(kind: CcaKind, cfg: &ScenarioConfig) -> Box<dyn CongestionControl> {
    match kind {
        CcaKind::Prague => Box::new(Prague::new(cfg.prague.clone())),
        CcaKind::Cubic => Box::new(Cubic::new(cfg.cubic.clone())),
    }
}

fn access_index(dir: Direction, far: bool) -> usize {
    let d = match dir {
        Direction::Downlink => 0,
        Direction::Uplink => 2,
    };
    d + far as usize
}

impl World {
    pub fn new(cfg: &ScenarioConfig, run_number: u32) -> Result<Self, crate::error::ConfigError> {
        cfg.validate()?;
        let topo = build_dumbbell(cfg.bottleneck_rate_bps, cfg.delay, cfg.delay_is_rtt)?;
        let interval = cfg.sample_interval;
        let mut start_rng = RngStream::new(cfg.seed, run_number, START_STREAM);
        let mut sched = Scheduler::new();
        let mut flows = Vec::with_capacity(cfg.flows.len());
        let mut access = Vec::with_capacity(cfg.flows.len());
        for (i, f) in cfg.flows.iter().enumerate() {
            let sender = TcpSender::new(i, cfg.tcp.clone(), f.server_ecn, make_cca(f.cca, cfg));
            let receiver = TcpReceiver::new(i, cfg.tcp.clone(), f.client_ecn);
            flows.push(Flow {
                label: f.label.clone(),
                sender,
                receiver,
                probe: FlowProbe::new(interval),
            });
            let limit = cfg.aqm.limit_bytes;
            access.push(std::array::from_fn(|_| {
                Port::fifo(topo.access_rate_bps, topo.access_delay, limit)
            }));
            let jitter = SimTime::from_nanos(
                (start_rng.uniform() * cfg.start_jitter.as_nanos() as f64) as u64,
            );
            sched.schedule_at(f.start + jitter, Event::FlowStart(i));
            if let Some(stop) = f.stop {
                sched.schedule_at(stop, Event::FlowStop(i));
            }
        }
        sched.schedule_at(cfg.aqm.t_update, Event::Pi2Update);
        Ok(World {
            run_number,
            aqm_rng: RngStream::new(cfg.seed, run_number, AQM_STREAM),
            sched,
            flows,
            access,
            down: Port {
                link: Link::new(topo.bottleneck_rate_bps, topo.bottleneck_delay),
                queue: Queue::Aqm(Box::new(DualPi2::new(cfg.aqm.clone()))),
                busy: false,
            },
            up: Port::fifo(
                topo.bottleneck_rate_bps,
                topo.bottleneck_delay,
                cfg.reverse_limit_bytes,
            ),
            outbox: Outbox::default(),
            sojourn_l: Binner::new(interval, BinMode::Mean),
            sojourn_c: Binner::new(interval, BinMode::Mean),
            sojourn_steady: [(0.0, 0); 2],
            probabilities: Vec::new(),
            events: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn aqm(&self) -> &DualPi2 {
        match &self.down.queue {
            Queue::Aqm(a) => a,
            Queue::Fifo(_) => unreachable!("the downlink bottleneck always runs DualPI2"),
        }
    }

    pub fn probabilities(&self) -> &[ProbabilitySample] {
        &self.probabilities
    }

    /// Advances the simulation to `until` (capped at the scenario duration).
    pub fn run_until(&mut self, until: SimTime) {
        let end = until.min(self.cfg.duration);
        while let Some((_, ev)) = self.sched.pop_until(end) {
            self.events += 1;
            self.handle(ev);
        }
        self.sched.advance_to(end);
    }

    /// Runs to the end and collects the results.
    pub fn run(mut self) -> Result<RunOutput, MetricsError> {
        self.run_until(self.cfg.duration);
        self.finish()
    }

    fn port(&mut self, id: PortId) -> &mut Port {
        match id {
            PortId::Access { flow, dir, far } => &mut self.access[flow][access_index(dir, far)],
            PortId::BottleneckDown => &mut self.down,
            PortId::BottleneckUp => &mut self.up,
        }
    }

    fn port_for(pkt: &Packet) -> PortId {
        let (flow, dir) = (pkt.flow_id, pkt.direction);
        match (dir, pkt.hop) {
            (Direction::Downlink, 1) => PortId::BottleneckDown,
            (Direction::Uplink, 1) => PortId::BottleneckUp,
            (_, hop) => PortId::Access {
                flow,
                dir,
                far: hop > 0,
            },
        }
    }

    fn handle(&mut self, ev: Event) {
        let now = self.sched.now();
        match ev {
            Event::PortFree(id) => {
                self.port(id).busy = false;
                self.start_tx(id, now);
            }
            Event::Arrive(pkt) => {
                if pkt.hop >= PATH_HOPS {
                    self.deliver(pkt, now);
                } else {
                    self.enqueue(pkt, now);
                }
            }
            Event::Timer { flow, side, kind } => {
                let f = &mut self.flows[flow];
                match side {
                    Side::Server => f.sender.on_timer(kind, now, &mut self.outbox),
                    Side::Client => f.receiver.on_timer(kind, now, &mut self.outbox),
                }
                self.flush(flow, side);
            }
            Event::Pi2Update => {
                let interval = self.cfg.aqm.t_update;
                if let Queue::Aqm(aqm) = &mut self.down.queue {
                    self.probabilities.push(aqm.pi2_update(now));
                }
                self.sched.schedule(interval, Event::Pi2Update);
            }
            Event::FlowStart(i) => {
                self.flows[i].receiver.connect(now, &mut self.outbox);
                self.flush(i, Side::Client);
            }
            Event::FlowStop(i) => self.flows[i].sender.stop_sending(),
        }
    }

    /// Hands the outbox of one endpoint to the network and the clock.
    fn flush(&mut self, flow: usize, side: Side) {
        let now = self.sched.now();
        let mut packets = std::mem::take(&mut self.outbox.packets);
        for pkt in packets.drain(..) {
            self.enqueue(pkt, now);
        }
        self.outbox.packets = packets;
        for (kind, at) in self.outbox.timers.drain(..) {
            self.sched
                .schedule_at(at.max(now), Event::Timer { flow, side, kind });
        }
    }

    fn enqueue(&mut self, pkt: Packet, now: SimTime) {
        let id = Self::port_for(&pkt);
        let port = self.port(id);
        let accepted = match &mut port.queue {
            Queue::Aqm(aqm) => aqm.classify_enqueue(pkt, now).is_ok(),
            Queue::Fifo(q) => q.enqueue(pkt, now).is_ok(),
        };
        if accepted && !port.busy {
            self.start_tx(id, now);
        }
    }

    fn start_tx(&mut self, id: PortId, now: SimTime) {
        let steady = now >= self.cfg.warmup;
        let port = match id {
            PortId::Access { flow, dir, far } => &mut self.access[flow][access_index(dir, far)],
            PortId::BottleneckDown => &mut self.down,
            PortId::BottleneckUp => &mut self.up,
        };
        let pkt = match &mut port.queue {
            Queue::Fifo(q) => q.dequeue(),
            Queue::Aqm(aqm) => aqm.dequeue(now, &mut self.aqm_rng).map(|d| {
                let soj = d.sojourn.as_secs_f64();
                let q = match d.queue {
                    QueueId::L4s => 0,
                    QueueId::Classic => 1,
                };
                if q == 0 {
                    self.sojourn_l.add(now, soj);
                } else {
                    self.sojourn_c.add(now, soj);
                }
                if steady {
                    self.sojourn_steady[q].0 += soj;
                    self.sojourn_steady[q].1 += 1;
                }
                if d.marked {
                    let probe = &mut self.flows[d.packet.flow_id].probe;
                    probe.marks.add(now, 1.0);
                    if steady {
                        probe.marks_steady += 1;
                    }
                }
                d.packet
            }),
        };
        let Some(mut pkt) = pkt else {
            return;
        };
        let (done, delivery) = port.link.transmit(now, &pkt);
        port.busy = true;
        pkt.hop += 1;
        self.sched.schedule_at(done, Event::PortFree(id));
        self.sched.schedule_at(delivery, Event::Arrive(pkt));
    }

    fn deliver(&mut self, pkt: Packet, now: SimTime) {
        let i = pkt.flow_id;
        let steady = now >= self.cfg.warmup;
        let f = &mut self.flows[i];
        match pkt.direction {
            Direction::Downlink => {
                f.receiver.on_packet(&pkt, now, &mut self.outbox);
                let delivered = f.receiver.delivered_bytes();
                let new = delivered - f.probe.last_delivered;
                if new > 0 {
                    f.probe.last_delivered = delivered;
                    f.probe.throughput.add(now, new as f64 * 8.0);
                    if steady {
                        f.probe.delivered_steady += new;
                    }
                }
                self.flush(i, Side::Client);
            }
            Direction::Uplink => {
                let flags = pkt.header.flags;
                if flags.contains(TcpFlags::SYN) && !flags.contains(TcpFlags::ACK) {
                    f.sender.on_syn(&pkt, now, &mut self.outbox);
                } else {
                    f.sender.on_ack(&pkt, now, &mut self.outbox);
                    if let Some(srtt) = f.sender.rtt().srtt {
                        let s = srtt.as_secs_f64();
                        f.probe.rtt.add(now, s);
                        if steady {
                            f.probe.rtt_sum += s;
                            f.probe.rtt_n += 1;
                        }
                    }
                    f.probe.cwnd.add(now, f.sender.cca().cwnd_segments());
                }
                self.flush(i, Side::Server);
            }
        }
    }

    fn finish(self) -> Result<RunOutput, MetricsError> {
        let end = self.cfg.duration;
        let steady_s = (end - self.cfg.warmup).as_secs_f64();
        let mut series = Vec::new();
        let mut flows = Vec::new();
        for f in &self.flows {
            let l = &f.label;
            series.push(f.probe.throughput.finish(format!("{l}_throughput"), end));
            series.push(f.probe.rtt.finish(format!("{l}_rtt"), end));
            series.push(f.probe.cwnd.finish(format!("{l}_cwnd"), end));
            series.push(f.probe.marks.finish(format!("{l}_marks"), end));
            flows.push(FlowSummary {
                label: l.clone(),
                throughput_bps: f.probe.delivered_steady as f64 * 8.0 / steady_s,
                mean_rtt_s: if f.probe.rtt_n > 0 {
                    f.probe.rtt_sum / f.probe.rtt_n as f64
                } else {
                    0.0
                },
                ce_marks: f.probe.marks_steady,
                ce_marks_per_s: f.probe.marks_steady as f64 / steady_s,
                retransmits: f.sender.stats().retransmits,
            });
        }
        series.push(self.sojourn_l.finish("l4s_sojourn", end));
        series.push(self.sojourn_c.finish("classic_sojourn", end));
        let t_update = self.cfg.aqm.t_update;
        let mut p_prime = TimeSeries::new("p_prime", t_update);
        let mut p_l = TimeSeries::new("p_l", t_update);
        let mut p_c = TimeSeries::new("p_c", t_update);
        for s in &self.probabilities {
            let t = s.time.as_secs_f64();
            p_prime.push(t, s.p_prime);
            p_l.push(t, s.p_l);
            p_c.push(t, s.p_c);
        }
        series.extend([p_prime, p_l, p_c]);

        let mean = |(sum, n): (f64, u64)| if n > 0 { sum / n as f64 } else { 0.0 };
        let throughputs: Vec<f64> = flows.iter().map(|f| f.throughput_bps).collect();
        let summary = RunSummary {
            run_number: self.run_number,
            jain_index: jain_index(&throughputs)?,
            flows,
            l4s_sojourn_s: mean(self.sojourn_steady[0]),
            classic_sojourn_s: mean(self.sojourn_steady[1]),
        };
        let aqm = self.aqm();
        Ok(RunOutput {
            summary,
            series,
            l4s_stats: aqm.stats(QueueId::L4s),
            classic_stats: aqm.stats(QueueId::Classic),
            probabilities: self.probabilities,
            events: self.events,
        })
    }
}

/// Runs replication `run_number` of `cfg`.
pub fn run_once(
    cfg: &ScenarioConfig,
    run_number: u32,
) -> Result<RunOutput, crate::error::RunError> {
    let world = World::new(cfg, run_number)?;
    Ok(world.run()?)
}
