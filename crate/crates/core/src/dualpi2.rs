//! DualQ Coupled AQM (DualPI2).
//!
//! Packets are classified on their ECN codepoint: ECT(1) and CE go to the
//! low-latency L queue, ECT(0) and Not-ECT to the classic C queue. A PI
//! controller on the classic queuing delay produces a base probability
//! `p'`; classic packets see `p'^2`, L packets see `min(k p', 1)` combined
//! with a native delay ramp on the L queue. All decisions are taken at
//! dequeue using sojourn time.

use std::collections::VecDeque;

use crate::net::{IpEcn, Packet, DEFAULT_MTU};
use crate::sim::{RngStream, SimTime};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SchedulerKind {
    /// Byte-credit weighted round robin: `l_weight` percent of the link
    /// goes to the L queue when both queues are backlogged.
    WeightedRoundRobin { l_weight: u32 },
    /// Serve the queue whose head has waited longest, crediting the L head
    /// with an extra `shift`.
    TimeShifted { shift: SimTime },
}

impl SchedulerKind {
    pub fn wrr_default() -> Self {
        SchedulerKind::WeightedRoundRobin { l_weight: 90 }
    }

    pub fn timeshift_default() -> Self {
        SchedulerKind::TimeShifted {
            shift: SimTime::from_millis(50),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualPi2Config {
    pub target_delay: SimTime,
    pub t_update: SimTime,
    /// Integral gain, per second.
    pub pi_alpha: f64,
    /// Proportional gain, per second.
    pub pi_beta: f64,
    pub coupling: f64,
    /// L sojourn at which marking reaches probability 1.
    pub l_step_threshold: SimTime,
    /// L sojourn at which the marking ramp starts.
    pub l_ramp_start: SimTime,
    pub limit_bytes: u64,
    /// No AQM mark or drop while the packet's queue holds at most this many
    /// bytes.
    pub min_queue_bytes: u64,
    pub scheduler: SchedulerKind,
}

impl Default for DualPi2Config {
    fn default() -> Self {
        DualPi2Config {
            target_delay: SimTime::from_millis(15),
            t_update: SimTime::from_millis(16),
            pi_alpha: 0.16,
            pi_beta: 3.2,
            coupling: 2.0,
            l_step_threshold: SimTime::from_millis(1),
            l_ramp_start: SimTime::from_micros(475),
            limit_bytes: 10_000 * DEFAULT_MTU as u64,
            min_queue_bytes: 2 * DEFAULT_MTU as u64,
            scheduler: SchedulerKind::wrr_default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueueId {
    L4s,
    Classic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Mark,
    Drop,
}

/// Probabilities in force after a PI update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbabilitySample {
    pub time: SimTime,
    pub p_prime: f64,
    pub p_l: f64,
    pub p_c: f64,
}

/// A packet leaving the AQM towards the link.
#[derive(Clone, Debug)]
pub struct Dequeued {
    pub packet: Packet,
    pub queue: QueueId,
    pub sojourn: SimTime,
    pub marked: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub enqueued: u64,
    pub dequeued: u64,
    pub marked: u64,
    pub aqm_drops: u64,
    pub overflow_drops: u64,
}

#[derive(Debug, Default)]
struct Fifo {
    packets: VecDeque<Packet>,
    bytes: u64,
}

impl Fifo {
    fn push(&mut self, pkt: Packet) {
        self.bytes += pkt.wire_size() as u64;
        self.packets.push_back(pkt);
    }

    fn pop(&mut self) -> Option<Packet> {
        let pkt = self.packets.pop_front()?;
        self.bytes -= pkt.wire_size() as u64;
        Some(pkt)
    }

    fn head_sojourn(&self, now: SimTime) -> Option<SimTime> {
        self.packets
            .front()
            .map(|p| now.saturating_sub(p.enqueue_time))
    }

    fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

pub fn coupled_l4s_probability(p_prime: f64, coupling: f64) -> f64 {
    (coupling * p_prime).min(1.0)
}

pub fn classic_probability(p_prime: f64) -> f64 {
    p_prime * p_prime
}

#[derive(Debug)]
pub struct DualPi2 {
    cfg: DualPi2Config,
    l: Fifo,
    c: Fifo,
    p_prime: f64,
    prev_delay: SimTime,
    credit: i64,
    l_stats: QueueStats,
    c_stats: QueueStats,
}

impl DualPi2 {
    pub fn new(cfg: DualPi2Config) -> Self {
        let credit = match cfg.scheduler {
            SchedulerKind::WeightedRoundRobin { l_weight } => {
                let c_weight = 100 - l_weight.min(100) as i64;
                DEFAULT_MTU as i64 * (c_weight - l_weight as i64)
            }
            SchedulerKind::TimeShifted { .. } => 0,
        };
        DualPi2 {
            cfg,
            l: Fifo::default(),
            c: Fifo::default(),
            p_prime: 0.0,
            prev_delay: SimTime::ZERO,
            credit,
            l_stats: QueueStats::default(),
            c_stats: QueueStats::default(),
        }
    }

    pub fn config(&self) -> &DualPi2Config {
        &self.cfg
    }

    pub fn p_prime(&self) -> f64 {
        self.p_prime
    }

    pub fn set_p_prime(&mut self, p: f64) {
        self.p_prime = p.clamp(0.0, 1.0);
    }

    pub fn p_l(&self) -> f64 {
        coupled_l4s_probability(self.p_prime, self.cfg.coupling)
    }

    pub fn p_c(&self) -> f64 {
        classic_probability(self.p_prime)
    }

    pub fn stats(&self, q: QueueId) -> QueueStats {
        match q {
            QueueId::L4s => self.l_stats,
            QueueId::Classic => self.c_stats,
        }
    }

    pub fn len(&self, q: QueueId) -> usize {
        match q {
            QueueId::L4s => self.l.packets.len(),
            QueueId::Classic => self.c.packets.len(),
        }
    }

    pub fn bytes(&self, q: QueueId) -> u64 {
        match q {
            QueueId::L4s => self.l.bytes,
            QueueId::Classic => self.c.bytes,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.l.bytes + self.c.bytes
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty() && self.c.is_empty()
    }

    pub fn classify(ecn: IpEcn) -> QueueId {
        if ecn.is_l4s() {
            QueueId::L4s
        } else {
            QueueId::Classic
        }
    }

    /// Classifies and timestamps `pkt`. Hands the packet back if the shared
    /// buffer cannot hold it.
    pub fn classify_enqueue(&mut self, mut pkt: Packet, now: SimTime) -> Result<QueueId, Packet> {
        let q = Self::classify(pkt.ecn);
        if self.total_bytes() + pkt.wire_size() as u64 > self.cfg.limit_bytes {
            match q {
                QueueId::L4s => self.l_stats.overflow_drops += 1,
                QueueId::Classic => self.c_stats.overflow_drops += 1,
            }
            return Err(pkt);
        }
        pkt.enqueue_time = now;
        match q {
            QueueId::L4s => {
                self.l_stats.enqueued += 1;
                self.l.push(pkt);
            }
            QueueId::Classic => {
                self.c_stats.enqueued += 1;
                self.c.push(pkt);
            }
        }
        Ok(q)
    }

    /// One PI step on the classic head-of-line sojourn.
    pub fn pi2_update(&mut self, now: SimTime) -> ProbabilitySample {
        let cur = self.c.head_sojourn(now).unwrap_or(SimTime::ZERO);
        let cur_s = cur.as_secs_f64();
        let delta = self.cfg.pi_alpha * (cur_s - self.cfg.target_delay.as_secs_f64())
            + self.cfg.pi_beta * (cur_s - self.prev_delay.as_secs_f64());
        self.p_prime = (self.p_prime + delta).clamp(0.0, 1.0);
        self.prev_delay = cur;
        ProbabilitySample {
            time: now,
            p_prime: self.p_prime,
            p_l: self.p_l(),
            p_c: self.p_c(),
        }
    }

    /// Native L marking probability for a given L sojourn.
    pub fn l4s_ramp(&self, sojourn: SimTime) -> f64 {
        let lo = self.cfg.l_ramp_start;
        let hi = self.cfg.l_step_threshold;
        if sojourn >= hi {
            1.0
        } else if sojourn <= lo {
            0.0
        } else {
            (sojourn - lo).as_secs_f64() / (hi - lo).as_secs_f64()
        }
    }

    /// Combined L marking probability. The native ramp is suppressed while
    /// the L queue holds at most `min_queue_bytes` (`backlog` includes the
    /// packet being decided): at low rates one packet's serialization alone
    /// can exceed the ramp. The coupled part always applies.
    pub fn l4s_probability(&self, sojourn: SimTime, backlog: u64) -> f64 {
        let native = if backlog <= self.cfg.min_queue_bytes {
            0.0
        } else {
            self.l4s_ramp(sojourn)
        };
        native.max(self.p_l())
    }

    /// Decision for a classic packet at dequeue. `backlog` is the classic
    /// queue's byte count including the packet.
    pub fn classic_mark_or_drop(&self, pkt: &Packet, backlog: u64, rng: &mut RngStream) -> Verdict {
        if backlog <= self.cfg.min_queue_bytes {
            return Verdict::Pass;
        }
        if rng.bernoulli(self.p_c()) {
            if pkt.ecn.is_ect() {
                Verdict::Mark
            } else {
                Verdict::Drop
            }
        } else {
            Verdict::Pass
        }
    }

    /// Decision for an L packet at dequeue. Never drops.
    pub fn l4s_mark(&self, sojourn: SimTime, backlog: u64, rng: &mut RngStream) -> Verdict {
        if rng.bernoulli(self.l4s_probability(sojourn, backlog)) {
            Verdict::Mark
        } else {
            Verdict::Pass
        }
    }

    fn pick_queue(&self, now: SimTime) -> Option<QueueId> {
        match (self.l.is_empty(), self.c.is_empty()) {
            (true, true) => None,
            (false, true) => Some(QueueId::L4s),
            (true, false) => Some(QueueId::Classic),
            (false, false) => Some(match self.cfg.scheduler {
                SchedulerKind::WeightedRoundRobin { .. } => {
                    if self.credit <= 0 {
                        QueueId::L4s
                    } else {
                        QueueId::Classic
                    }
                }
                SchedulerKind::TimeShifted { shift } => {
                    let l_wait = self.l.head_sojourn(now).unwrap_or_default();
                    let c_wait = self.c.head_sojourn(now).unwrap_or_default();
                    if c_wait > l_wait + shift {
                        QueueId::Classic
                    } else {
                        QueueId::L4s
                    }
                }
            }),
        }
    }

    fn charge_credit(&mut self, served: QueueId, bytes: u64) {
        let SchedulerKind::WeightedRoundRobin { l_weight } = self.cfg.scheduler else {
            return;
        };
        let l_weight = l_weight.min(100) as i64;
        let c_weight = 100 - l_weight;
        let bytes = bytes as i64;
        match served {
            QueueId::L4s if !self.c.is_empty() => self.credit += c_weight * bytes,
            QueueId::Classic if !self.l.is_empty() => self.credit -= l_weight * bytes,
            _ => {}
        }
    }

    /// Next packet for the link, after the chosen queue's mark/drop law.
    /// Dropped packets are counted and the next candidate is tried.
    pub fn dequeue(&mut self, now: SimTime, rng: &mut RngStream) -> Option<Dequeued> {
        loop {
            let queue = self.pick_queue(now)?;
            let backlog = self.bytes(queue);
            let mut pkt = match queue {
                QueueId::L4s => self.l.pop(),
                QueueId::Classic => self.c.pop(),
            }
            .expect("picked a non-empty queue");
            self.charge_credit(queue, pkt.wire_size() as u64);
            let sojourn = now.saturating_sub(pkt.enqueue_time);
            let (verdict, stats) = match queue {
                QueueId::L4s => (self.l4s_mark(sojourn, backlog, rng), &mut self.l_stats),
                QueueId::Classic => (
                    self.classic_mark_or_drop(&pkt, backlog, rng),
                    &mut self.c_stats,
                ),
            };
            match verdict {
                Verdict::Drop => {
                    stats.aqm_drops += 1;
                    continue;
                }
                Verdict::Mark => {
                    stats.marked += 1;
                    stats.dequeued += 1;
                    pkt.mark_ce();
                }
                Verdict::Pass => stats.dequeued += 1,
            }
            return Some(Dequeued {
                packet: pkt,
                queue,
                sojourn,
                marked: verdict == Verdict::Mark,
            });
        }
    }
}

/// Plain FIFO with a byte limit, used on every link except the bottleneck.
#[derive(Debug)]
pub struct DropTail {
    fifo: Fifo,
    limit_bytes: u64,
    pub drops: u64,
}

impl DropTail {
    pub fn new(limit_bytes: u64) -> Self {
        DropTail {
            fifo: Fifo::default(),
            limit_bytes,
            drops: 0,
        }
    }

    pub fn enqueue(&mut self, mut pkt: Packet, now: SimTime) -> Result<(), Packet> {
        if self.fifo.bytes + pkt.wire_size() as u64 > self.limit_bytes {
            self.drops += 1;
            return Err(pkt);
        }
        pkt.enqueue_time = now;
        self.fifo.push(pkt);
        Ok(())
    }

    pub fn dequeue(&mut self) -> Option<Packet> {
        self.fifo.pop()
    }

    pub fn len(&self) -> usize {
        self.fifo.packets.len()
    }

    pub fn bytes(&self) -> u64 {
        self.fifo.bytes
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Direction, TcpHeader};

    fn pkt(ecn: IpEcn) -> Packet {
        Packet::new(0, Direction::Downlink, 1460, TcpHeader::default(), ecn)
    }

    fn rng() -> RngStream {
        RngStream::new(1, 1, 0)
    }

    #[test]
    fn classification() {
        let mut q = DualPi2::new(DualPi2Config::default());
        assert_eq!(
            q.classify_enqueue(pkt(IpEcn::Ect1), SimTime::ZERO).unwrap(),
            QueueId::L4s
        );
        assert_eq!(
            q.classify_enqueue(pkt(IpEcn::Ce), SimTime::ZERO).unwrap(),
            QueueId::L4s
        );
        assert_eq!(
            q.classify_enqueue(pkt(IpEcn::Ect0), SimTime::ZERO).unwrap(),
            QueueId::Classic
        );
        assert_eq!(
            q.classify_enqueue(pkt(IpEcn::NotEct), SimTime::ZERO)
                .unwrap(),
            QueueId::Classic
        );
    }

    #[test]
    fn buffer_limit_drops_arrivals() {
        let mut q = DualPi2::new(DualPi2Config {
            limit_bytes: 3000,
            ..Default::default()
        });
        assert!(q.classify_enqueue(pkt(IpEcn::Ect1), SimTime::ZERO).is_ok());
        assert!(q.classify_enqueue(pkt(IpEcn::Ect0), SimTime::ZERO).is_ok());
        assert!(q.classify_enqueue(pkt(IpEcn::Ect1), SimTime::ZERO).is_err());
        assert_eq!(q.stats(QueueId::L4s).overflow_drops, 1);
        assert_eq!(q.total_bytes(), 3000);
    }

    #[test]
    fn pi_equilibrium_and_sign() {
        let mut q = DualPi2::new(DualPi2Config::default());
        q.set_p_prime(0.2);
        let target = q.cfg.target_delay;
        q.prev_delay = target;
        q.classify_enqueue(pkt(IpEcn::Ect0), SimTime::ZERO).unwrap();
        let s = q.pi2_update(target);
        assert!((s.p_prime - 0.2).abs() < 1e-15);

        q.pi2_update(target + SimTime::from_millis(10));
        assert!(q.p_prime() > 0.2);
    }

    #[test]
    fn empty_classic_queue_decays_p() {
        let mut q = DualPi2::new(DualPi2Config::default());
        q.set_p_prime(0.5);
        let mut now = SimTime::ZERO;
        let mut prev = q.p_prime();
        for _ in 0..400 {
            now += q.cfg.t_update;
            let p = q.pi2_update(now).p_prime;
            assert!(p <= prev);
            prev = p;
        }
        // each step removes 0.16 * 0.015 = 0.0024
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn coupling_algebra() {
        assert!((classic_probability(0.1) - 0.01).abs() < 1e-15);
        assert!((coupled_l4s_probability(0.1, 2.0) - 0.2).abs() < 1e-15);
        assert_eq!(coupled_l4s_probability(0.7, 2.0), 1.0);
    }

    #[test]
    fn l4s_probability_combines_ramp_and_coupling() {
        let mut q = DualPi2::new(DualPi2Config::default());
        q.set_p_prime(0.1);
        assert!((q.l4s_probability(SimTime::ZERO, 9000) - 0.2).abs() < 1e-15);
        assert_eq!(q.l4s_probability(SimTime::from_millis(5), 9000), 1.0);
        q.set_p_prime(0.0);
        assert_eq!(q.l4s_probability(SimTime::ZERO, 9000), 0.0);
        let mid = q.l4s_ramp(SimTime::from_nanos(737_500));
        assert!((mid - 0.5).abs() < 1e-12);
    }

    #[test]
    fn not_ect_selected_is_dropped() {
        let mut q = DualPi2::new(DualPi2Config::default());
        q.set_p_prime(1.0);
        let mut r = rng();
        assert_eq!(
            q.classic_mark_or_drop(&pkt(IpEcn::NotEct), 10_000, &mut r),
            Verdict::Drop
        );
        assert_eq!(
            q.classic_mark_or_drop(&pkt(IpEcn::Ect0), 10_000, &mut r),
            Verdict::Mark
        );
    }

    #[test]
    fn min_queue_guard_passes() {
        let mut q = DualPi2::new(DualPi2Config::default());
        q.set_p_prime(1.0);
        let mut r = rng();
        assert_eq!(
            q.classic_mark_or_drop(&pkt(IpEcn::Ect0), 3000, &mut r),
            Verdict::Pass
        );
        // a lone L packet escapes the ramp but not the coupled probability
        assert_eq!(
            q.l4s_mark(SimTime::from_millis(5), 1500, &mut r),
            Verdict::Mark
        );
        q.set_p_prime(0.0);
        assert_eq!(
            q.l4s_mark(SimTime::from_millis(5), 1500, &mut r),
            Verdict::Pass
        );
        assert_eq!(
            q.l4s_mark(SimTime::from_millis(5), 4500, &mut r),
            Verdict::Mark
        );
    }

    #[test]
    fn classic_action_frequency_is_squared() {
        let mut q = DualPi2::new(DualPi2Config::default());
        q.set_p_prime(0.3);
        let mut r = rng();
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| q.classic_mark_or_drop(&pkt(IpEcn::Ect0), 100_000, &mut r) == Verdict::Mark)
            .count();
        assert!((hits as f64 / n as f64 - 0.09).abs() < 0.003);
    }

    #[test]
    fn wrr_serves_l_first_then_protects_classic() {
        let mut q = DualPi2::new(DualPi2Config::default());
        let mut r = rng();
        for _ in 0..20 {
            q.classify_enqueue(pkt(IpEcn::Ect1), SimTime::ZERO).unwrap();
            q.classify_enqueue(pkt(IpEcn::Ect0), SimTime::ZERO).unwrap();
        }
        let order: Vec<QueueId> = (0..20)
            .map(|_| q.dequeue(SimTime::ZERO, &mut r).unwrap().queue)
            .collect();
        assert_eq!(order[0], QueueId::L4s);
        let classic = order.iter().filter(|&&x| x == QueueId::Classic).count();
        assert_eq!(classic, 2);
    }

    #[test]
    fn time_shifted_compares_shifted_waits() {
        let cfg = DualPi2Config {
            scheduler: SchedulerKind::timeshift_default(),
            ..Default::default()
        };
        let mut q = DualPi2::new(cfg);
        let mut r = rng();
        q.classify_enqueue(pkt(IpEcn::Ect0), SimTime::ZERO).unwrap();
        q.classify_enqueue(pkt(IpEcn::Ect1), SimTime::from_millis(59))
            .unwrap();
        let d = q.dequeue(SimTime::from_millis(60), &mut r).unwrap();
        assert_eq!(d.queue, QueueId::Classic);
        assert_eq!(d.sojourn, SimTime::from_millis(60));

        let mut q = DualPi2::new(DualPi2Config {
            scheduler: SchedulerKind::timeshift_default(),
            ..Default::default()
        });
        q.classify_enqueue(pkt(IpEcn::Ect0), SimTime::ZERO).unwrap();
        q.classify_enqueue(pkt(IpEcn::Ect1), SimTime::from_millis(10))
            .unwrap();
        assert_eq!(
            q.dequeue(SimTime::from_millis(40), &mut r).unwrap().queue,
            QueueId::L4s
        );
    }

    #[test]
    fn work_conserving_with_single_queue() {
        let mut q = DualPi2::new(DualPi2Config::default());
        let mut r = rng();
        q.classify_enqueue(pkt(IpEcn::Ect0), SimTime::ZERO).unwrap();
        assert_eq!(
            q.dequeue(SimTime::ZERO, &mut r).unwrap().queue,
            QueueId::Classic
        );
        assert!(q.dequeue(SimTime::ZERO, &mut r).is_none());
    }

    #[test]
    fn dropped_packets_trigger_next_candidate() {
        let mut q = DualPi2::new(DualPi2Config::default());
        q.set_p_prime(1.0);
        let mut r = rng();
        for _ in 0..4 {
            q.classify_enqueue(pkt(IpEcn::NotEct), SimTime::ZERO)
                .unwrap();
        }
        // the first two are dropped while the backlog exceeds two MTUs
        let d = q.dequeue(SimTime::ZERO, &mut r).unwrap();
        assert!(!d.marked);
        assert_eq!(q.stats(QueueId::Classic).aqm_drops, 2);
        assert_eq!(q.len(QueueId::Classic), 1);
    }

    #[test]
    fn l4s_never_aqm_dropped() {
        let mut q = DualPi2::new(DualPi2Config::default());
        q.set_p_prime(1.0);
        let mut r = rng();
        for _ in 0..50 {
            q.classify_enqueue(pkt(IpEcn::Ect1), SimTime::ZERO).unwrap();
        }
        let mut out = 0;
        while q.dequeue(SimTime::from_millis(10), &mut r).is_some() {
            out += 1;
        }
        assert_eq!(out, 50);
        assert_eq!(q.stats(QueueId::L4s).aqm_drops, 0);
    }

    #[test]
    fn droptail_limit() {
        let mut q = DropTail::new(3000);
        assert!(q.enqueue(pkt(IpEcn::NotEct), SimTime::ZERO).is_ok());
        assert!(q.enqueue(pkt(IpEcn::NotEct), SimTime::ZERO).is_ok());
        assert!(q.enqueue(pkt(IpEcn::NotEct), SimTime::ZERO).is_err());
        assert_eq!(q.drops, 1);
    }
}
