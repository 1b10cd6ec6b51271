//! TCP endpoints for a one-way bulk transfer.
//!
//! [`TcpSender`] is the server side: it answers the handshake, pushes data
//! as fast as its congestion controller and pacer allow, and turns each ACK
//! into a [`CcaFeedback`]. AccECN decoding happens here, so the controller
//! only ever sees the CE delta. [`TcpReceiver`] is the client side: it opens
//! the connection, reassembles data and echoes congestion in its ACKs.
//!
//! Neither endpoint owns a clock or an event queue. Packets to transmit and
//! timers to arm are pushed into an [`Outbox`] that the caller drains.

use std::collections::{BTreeMap, VecDeque};

use crate::accecn::{self, AceCounters, EcnMode};
use crate::cc::{CcaFeedback, CongestionControl};
use crate::net::{Direction, IpEcn, Packet, TcpFlags, TcpHeader};
use crate::sim::SimTime;

const SERVER_PORT: u16 = 5001;
const CLIENT_PORT_BASE: u16 = 49152;

#[derive(Clone, Debug, PartialEq)]
pub struct TcpConfig {
    pub mss: u32,
    /// Data segments per ACK at the receiver (1 disables delayed ACKs).
    pub ack_ratio: u32,
    pub delayed_ack_timeout: SimTime,
    pub min_rto: SimTime,
    pub max_rto: SimTime,
    pub initial_rto: SimTime,
    pub dupack_threshold: u32,
    /// Starting value of the AccECN CE counters.
    pub cep_init: u64,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            mss: crate::net::DEFAULT_MSS,
            ack_ratio: 1,
            delayed_ack_timeout: SimTime::from_millis(40),
            min_rto: SimTime::from_millis(200),
            max_rto: SimTime::from_secs(60),
            initial_rto: SimTime::from_secs(1),
            dupack_threshold: 3,
            cep_init: accecn::DEFAULT_CEP_INIT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TimerKind {
    Pacing,
    Rto,
    DelayedAck,
    SynRetry,
}

/// Work produced by an endpoint call.
#[derive(Debug, Default)]
pub struct Outbox {
    pub packets: Vec<Packet>,
    pub timers: Vec<(TimerKind, SimTime)>,
}

impl Outbox {
    pub fn clear(&mut self) {
        self.packets.clear();
        self.timers.clear();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnState {
    Closed,
    Handshake,
    Established,
    Recovery,
}

/// Smoothed RTT and retransmission timeout estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct RttEstimator {
    pub srtt: Option<SimTime>,
    pub rttvar: SimTime,
    pub latest: Option<SimTime>,
    min_rto: SimTime,
    initial_rto: SimTime,
}

impl RttEstimator {
    pub fn new(min_rto: SimTime, initial_rto: SimTime) -> Self {
        RttEstimator {
            srtt: None,
            rttvar: SimTime::ZERO,
            latest: None,
            min_rto,
            initial_rto,
        }
    }

    pub fn update(&mut self, sample: SimTime) {
        self.latest = Some(sample);
        match self.srtt {
            None => {
                self.srtt = Some(sample);
                self.rttvar = SimTime::from_nanos(sample.as_nanos() / 2);
            }
            Some(srtt) => {
                let diff = srtt.as_nanos().abs_diff(sample.as_nanos());
                self.rttvar = SimTime::from_nanos((3 * self.rttvar.as_nanos() + diff) / 4);
                self.srtt = Some(SimTime::from_nanos(
                    (7 * srtt.as_nanos() + sample.as_nanos()) / 8,
                ));
            }
        }
    }

    pub fn rto(&self) -> SimTime {
        match self.srtt {
            None => self.initial_rto,
            Some(srtt) => (srtt + self.rttvar * 4).max(self.min_rto),
        }
    }
}

/// Maps a 32-bit wire sequence number back to a 64-bit stream offset
/// using `reference`, an offset known to be within 2^31 bytes of it.
pub fn unwrap_seq(wire: u32, isn: u32, reference: u64) -> u64 {
    let rel = wire.wrapping_sub(isn).wrapping_sub(1);
    let diff = rel.wrapping_sub(reference as u32) as i32 as i64;
    (reference as i64 + diff).max(0) as u64
}

pub fn wire_seq(offset: u64, isn: u32) -> u32 {
    isn.wrapping_add(1).wrapping_add(offset as u32)
}

/// Data segment codepoint for a negotiated mode.
pub fn data_codepoint(mode: EcnMode, scalable: bool) -> IpEcn {
    match mode {
        EcnMode::AccEcn if scalable => IpEcn::Ect1,
        EcnMode::AccEcn | EcnMode::ClassicEcn => IpEcn::Ect0,
        EcnMode::Off => IpEcn::NotEct,
    }
}

#[derive(Clone, Copy, Debug)]
struct SentRecord {
    end: u64,
    time: SimTime,
    retransmitted: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SenderStats {
    pub segments_sent: u64,
    pub retransmits: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
    pub ignored_acks: u64,
    /// Sum of CE deltas handed to the controller.
    pub ce_feedback: u64,
}

pub struct TcpSender {
    flow_id: usize,
    cfg: TcpConfig,
    capability: EcnMode,
    cca: Box<dyn CongestionControl>,
    conn_state: ConnState,
    ecn_mode: EcnMode,
    ace: AceCounters,
    isn: u32,
    peer_isn: u32,
    snd_una: u64,
    snd_nxt: u64,
    snd_max: u64,
    recover: u64,
    dupacks: u32,
    rtt: RttEstimator,
    sent: VecDeque<SentRecord>,
    next_send_time: SimTime,
    pacing_timer_at: Option<SimTime>,
    rto_deadline: Option<SimTime>,
    rto_timer_at: Option<SimTime>,
    rto_backoff: u32,
    send_cwr: bool,
    synack_sent_at: Option<SimTime>,
    last_feedback: Option<CcaFeedback>,
    /// No new data after the application stops; retransmissions continue.
    stopped: bool,
    stats: SenderStats,
}

impl TcpSender {
    pub fn new(
        flow_id: usize,
        cfg: TcpConfig,
        capability: EcnMode,
        cca: Box<dyn CongestionControl>,
    ) -> Self {
        let rtt = RttEstimator::new(cfg.min_rto, cfg.initial_rto);
        TcpSender {
            flow_id,
            capability,
            cca,
            conn_state: ConnState::Closed,
            ecn_mode: EcnMode::Off,
            ace: AceCounters::new(cfg.cep_init),
            isn: 0,
            peer_isn: 0,
            snd_una: 0,
            snd_nxt: 0,
            snd_max: 0,
            recover: 0,
            dupacks: 0,
            rtt,
            sent: VecDeque::new(),
            next_send_time: SimTime::ZERO,
            pacing_timer_at: None,
            rto_deadline: None,
            rto_timer_at: None,
            rto_backoff: 0,
            send_cwr: false,
            synack_sent_at: None,
            last_feedback: None,
            stopped: false,
            stats: SenderStats::default(),
            cfg,
        }
    }

    pub fn flow_id(&self) -> usize {
        self.flow_id
    }

    pub fn conn_state(&self) -> ConnState {
        self.conn_state
    }

    pub fn ecn_mode(&self) -> EcnMode {
        self.ecn_mode
    }

    pub fn ace(&self) -> &AceCounters {
        &self.ace
    }

    pub fn cca(&self) -> &dyn CongestionControl {
        self.cca.as_ref()
    }

    pub fn rtt(&self) -> &RttEstimator {
        &self.rtt
    }

    pub fn stats(&self) -> &SenderStats {
        &self.stats
    }

    pub fn last_feedback(&self) -> Option<&CcaFeedback> {
        self.last_feedback.as_ref()
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }

    pub fn stop_sending(&mut self) {
        self.stopped = true;
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_deadline
    }

    /// Bytes considered in the network. During fast recovery each duplicate
    /// ACK is taken as one segment having left.
    pub fn bytes_in_flight(&self) -> u64 {
        let outstanding = self.snd_nxt - self.snd_una;
        if self.conn_state == ConnState::Recovery {
            outstanding.saturating_sub(self.dupacks as u64 * self.cfg.mss as u64)
        } else {
            outstanding
        }
    }

    fn header(&self, offset: u64, flags: TcpFlags) -> TcpHeader {
        TcpHeader {
            src_port: SERVER_PORT,
            dst_port: CLIENT_PORT_BASE + self.flow_id as u16,
            seq: wire_seq(offset, self.isn),
            ack: self.peer_isn.wrapping_add(1),
            flags,
            window: u16::MAX,
        }
    }

    /// Server side of the handshake.
    pub fn on_syn(&mut self, pkt: &Packet, now: SimTime, out: &mut Outbox) {
        if !matches!(self.conn_state, ConnState::Closed | ConnState::Handshake) {
            return;
        }
        let syn_flags = pkt.header.flags;
        let synack = accecn::make_synack_flags(self.capability, syn_flags, pkt.ecn);
        self.ecn_mode = accecn::resolve_negotiation(syn_flags, synack);
        self.peer_isn = pkt.header.seq;
        self.conn_state = ConnState::Handshake;
        self.synack_sent_at = Some(now);
        let mut h = self.header(0, synack);
        h.seq = self.isn;
        out.packets.push(Packet::new(
            self.flow_id,
            Direction::Downlink,
            0,
            h,
            IpEcn::NotEct,
        ));
    }

    /// Any non-SYN segment from the client.
    pub fn on_ack(&mut self, pkt: &Packet, now: SimTime, out: &mut Outbox) {
        match self.conn_state {
            ConnState::Closed => {}
            ConnState::Handshake => {
                if pkt.header.flags.contains(TcpFlags::ACK)
                    && pkt.header.ack == self.isn.wrapping_add(1)
                {
                    self.conn_state = ConnState::Established;
                    let rtt = now - self.synack_sent_at.unwrap_or(now);
                    if rtt > SimTime::ZERO {
                        self.rtt.update(rtt);
                    }
                    self.cca.on_connected(now, rtt);
                    self.try_send(now, out);
                }
            }
            ConnState::Established | ConnState::Recovery => self.process_ack(&pkt.header, now, out),
        }
    }

    fn process_ack(&mut self, hdr: &TcpHeader, now: SimTime, out: &mut Outbox) {
        let ack = unwrap_seq(hdr.ack, self.isn, self.snd_una);
        if ack < self.snd_una || ack > self.snd_max {
            self.stats.ignored_acks += 1;
            log::debug!(
                "flow {}: ignoring ack {ack} outside [{}, {}]",
                self.flow_id,
                self.snd_una,
                self.snd_max
            );
            return;
        }
        let mss = self.cfg.mss as u64;
        let newly = ack - self.snd_una;
        let acked_segments = newly.div_ceil(mss);
        let ce_delta = match self.ecn_mode {
            EcnMode::AccEcn => {
                accecn::decode_ace_delta(hdr.flags.ace(), &mut self.ace, acked_segments)
            }
            EcnMode::ClassicEcn => {
                let ece = hdr.flags.contains(TcpFlags::ECE);
                if ece {
                    self.send_cwr = true;
                }
                ece as u64
            }
            EcnMode::Off => 0,
        };
        self.stats.ce_feedback += ce_delta;

        let mut rtt_sample = None;
        let mut loss_event = false;
        let mut recovery_done = false;
        if newly > 0 {
            // Karn: an ACK that covers any retransmitted segment is ambiguous
            let mut ambiguous = false;
            while let Some(rec) = self.sent.front() {
                if rec.end > ack {
                    break;
                }
                ambiguous |= rec.retransmitted;
                rtt_sample = Some(now - rec.time);
                self.sent.pop_front();
            }
            if ambiguous {
                rtt_sample = None;
            }
            if let Some(s) = rtt_sample {
                self.rtt.update(s);
            }
            self.snd_una = ack;
            self.snd_nxt = self.snd_nxt.max(ack);
            self.dupacks = 0;
            if self.conn_state == ConnState::Recovery {
                if ack >= self.recover {
                    self.conn_state = ConnState::Established;
                    recovery_done = true;
                } else {
                    self.retransmit_head(now, out);
                }
            }
            self.rto_backoff = 0;
            if self.snd_una == self.snd_max {
                self.rto_deadline = None;
            } else {
                self.rto_deadline = Some(now + self.rtt.rto());
            }
        } else if self.snd_max > self.snd_una {
            self.dupacks += 1;
            if self.dupacks == self.cfg.dupack_threshold && self.conn_state != ConnState::Recovery {
                loss_event = true;
                self.stats.fast_retransmits += 1;
                self.recover = self.snd_max;
                self.conn_state = ConnState::Recovery;
                self.retransmit_head(now, out);
            }
        }

        let fb = CcaFeedback {
            acked_bytes: newly,
            ce_delta,
            rtt_sample,
            is_loss_event: loss_event,
        };
        let in_flight = self.bytes_in_flight();
        self.cca.on_feedback(now, &fb, in_flight);
        if recovery_done {
            self.cca.on_recovery_exit(now);
        }
        self.last_feedback = Some(fb);
        self.try_send(now, out);
        self.arm_rto(out);
    }

    pub fn on_timer(&mut self, kind: TimerKind, now: SimTime, out: &mut Outbox) {
        match kind {
            TimerKind::Pacing => {
                self.pacing_timer_at = None;
                self.try_send(now, out);
            }
            TimerKind::Rto => {
                self.rto_timer_at = None;
                match self.rto_deadline {
                    Some(d) if now >= d => self.on_retransmission_timeout(now, out),
                    _ => self.arm_rto(out),
                }
            }
            TimerKind::DelayedAck | TimerKind::SynRetry => {}
        }
    }

    /// Go-back-N from the first unacknowledged byte with a collapsed window.
    pub fn on_retransmission_timeout(&mut self, now: SimTime, out: &mut Outbox) {
        self.rto_deadline = None;
        if self.snd_una == self.snd_max {
            return;
        }
        self.stats.timeouts += 1;
        self.cca.on_timeout(now);
        self.recover = self.snd_max;
        self.snd_nxt = self.snd_una;
        self.dupacks = 0;
        self.conn_state = ConnState::Recovery;
        for rec in self.sent.iter_mut() {
            rec.retransmitted = true;
        }
        self.rto_backoff = (self.rto_backoff + 1).min(16);
        self.next_send_time = now;
        self.try_send(now, out);
        if self.snd_nxt == self.snd_una {
            self.retransmit_head(now, out);
        }
        self.arm_rto(out);
    }

    fn current_rto(&self) -> SimTime {
        (self.rtt.rto() * (1u64 << self.rto_backoff)).min(self.cfg.max_rto)
    }

    fn arm_rto(&mut self, out: &mut Outbox) {
        if self.snd_una < self.snd_max && self.rto_deadline.is_none() {
            // a timeout just fired or data was sent into an idle pipe
            return;
        }
        if let Some(deadline) = self.rto_deadline {
            if self.rto_timer_at.is_none_or(|t| t > deadline) {
                self.rto_timer_at = Some(deadline);
                out.timers.push((TimerKind::Rto, deadline));
            }
        }
    }

    fn codepoint(&self) -> IpEcn {
        data_codepoint(self.ecn_mode, self.cca.is_scalable())
    }

    fn data_flags(&mut self) -> TcpFlags {
        let mut flags = TcpFlags::ACK;
        match self.ecn_mode {
            EcnMode::AccEcn => flags = flags.with_ace((self.cfg.cep_init % 8) as u8),
            EcnMode::ClassicEcn if self.send_cwr => {
                flags |= TcpFlags::CWR;
                self.send_cwr = false;
            }
            _ => {}
        }
        flags
    }

    fn emit_segment(&mut self, offset: u64, now: SimTime, out: &mut Outbox) {
        let flags = self.data_flags();
        let h = self.header(offset, flags);
        out.packets.push(Packet::new(
            self.flow_id,
            Direction::Downlink,
            self.cfg.mss,
            h,
            self.codepoint(),
        ));
        self.stats.segments_sent += 1;
        if let Some(rate) = self.cca.pacing_rate_bps() {
            let bits = (self.cfg.mss + crate::net::HEADER_OVERHEAD) as f64 * 8.0;
            self.next_send_time = now + SimTime::from_secs_f64(bits / rate);
        }
    }

    fn retransmit_head(&mut self, now: SimTime, out: &mut Outbox) {
        let offset = self.snd_una;
        let end = offset + self.cfg.mss as u64;
        if let Ok(i) = self.sent.binary_search_by_key(&end, |r| r.end) {
            self.sent[i].retransmitted = true;
        }
        self.stats.retransmits += 1;
        self.emit_segment(offset, now, out);
        if self.snd_nxt < end {
            self.snd_nxt = end;
        }
    }

    /// Sends while the window and the pacer allow, otherwise arms the
    /// pacing timer.
    pub fn try_send(&mut self, now: SimTime, out: &mut Outbox) {
        if !matches!(
            self.conn_state,
            ConnState::Established | ConnState::Recovery
        ) {
            return;
        }
        let mss = self.cfg.mss as u64;
        loop {
            if self.bytes_in_flight() + mss > self.cca.cwnd_bytes() {
                break;
            }
            if self.cca.pacing_rate_bps().is_some() && now < self.next_send_time {
                if self.pacing_timer_at.is_none_or(|t| t > self.next_send_time) {
                    self.pacing_timer_at = Some(self.next_send_time);
                    out.timers.push((TimerKind::Pacing, self.next_send_time));
                }
                break;
            }
            let offset = self.snd_nxt;
            let end = offset + mss;
            if self.stopped && offset >= self.snd_max {
                break;
            }
            if offset < self.snd_max {
                self.stats.retransmits += 1;
            } else {
                self.sent.push_back(SentRecord {
                    end,
                    time: now,
                    retransmitted: false,
                });
            }
            self.emit_segment(offset, now, out);
            self.snd_nxt = end;
            self.snd_max = self.snd_max.max(end);
            if self.rto_deadline.is_none() {
                self.rto_deadline = Some(now + self.current_rto());
            }
        }
        self.arm_rto(out);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReceiverStats {
    pub segments_received: u64,
    pub ce_received: u64,
    pub duplicates: u64,
    pub acks_sent: u64,
}

pub struct TcpReceiver {
    flow_id: usize,
    cfg: TcpConfig,
    request: EcnMode,
    mode: EcnMode,
    conn_state: ConnState,
    ace: AceCounters,
    isn: u32,
    peer_isn: u32,
    syn_flags: TcpFlags,
    rcv_nxt: u64,
    out_of_order: BTreeMap<u64, u64>,
    ece_latch: bool,
    unacked_segments: u32,
    delack_deadline: Option<SimTime>,
    delack_timer_at: Option<SimTime>,
    /// What the SYN/ACK said our SYN arrived as, if AccECN was negotiated.
    syn_reflection: Option<IpEcn>,
    stats: ReceiverStats,
}

impl TcpReceiver {
    pub fn new(flow_id: usize, cfg: TcpConfig, request: EcnMode) -> Self {
        TcpReceiver {
            flow_id,
            request,
            mode: EcnMode::Off,
            conn_state: ConnState::Closed,
            ace: AceCounters::new(cfg.cep_init),
            isn: 0,
            peer_isn: 0,
            syn_flags: TcpFlags::NONE,
            rcv_nxt: 0,
            out_of_order: BTreeMap::new(),
            ece_latch: false,
            unacked_segments: 0,
            delack_deadline: None,
            delack_timer_at: None,
            syn_reflection: None,
            stats: ReceiverStats::default(),
            cfg,
        }
    }

    pub fn ecn_mode(&self) -> EcnMode {
        self.mode
    }

    pub fn conn_state(&self) -> ConnState {
        self.conn_state
    }

    pub fn ace(&self) -> &AceCounters {
        &self.ace
    }

    pub fn stats(&self) -> &ReceiverStats {
        &self.stats
    }

    /// In-order bytes handed to the application.
    pub fn delivered_bytes(&self) -> u64 {
        self.rcv_nxt
    }

    /// `Some(true)` when the SYN/ACK reflected the codepoint the SYN was
    /// sent with.
    pub fn path_integrity(&self) -> Option<bool> {
        self.syn_reflection.map(|e| e == IpEcn::NotEct)
    }

    fn header(&self, flags: TcpFlags) -> TcpHeader {
        TcpHeader {
            src_port: CLIENT_PORT_BASE + self.flow_id as u16,
            dst_port: SERVER_PORT,
            seq: self.isn.wrapping_add(1),
            ack: wire_seq(self.rcv_nxt, self.peer_isn),
            flags,
            window: u16::MAX,
        }
    }

    /// Opens the connection.
    pub fn connect(&mut self, now: SimTime, out: &mut Outbox) {
        self.syn_flags = accecn::make_syn_flags(self.request);
        self.conn_state = ConnState::Handshake;
        self.send_syn(now, out);
    }

    fn send_syn(&mut self, now: SimTime, out: &mut Outbox) {
        let h = TcpHeader {
            src_port: CLIENT_PORT_BASE + self.flow_id as u16,
            dst_port: SERVER_PORT,
            seq: self.isn,
            ack: 0,
            flags: self.syn_flags,
            window: u16::MAX,
        };
        out.packets.push(Packet::new(
            self.flow_id,
            Direction::Uplink,
            0,
            h,
            IpEcn::NotEct,
        ));
        out.timers
            .push((TimerKind::SynRetry, now + self.cfg.initial_rto));
    }

    pub fn on_timer(&mut self, kind: TimerKind, now: SimTime, out: &mut Outbox) {
        match kind {
            TimerKind::SynRetry if self.conn_state == ConnState::Handshake => {
                self.send_syn(now, out)
            }
            TimerKind::DelayedAck => {
                self.delack_timer_at = None;
                match self.delack_deadline {
                    Some(d) if now >= d => self.send_ack(out),
                    Some(d) => {
                        self.delack_timer_at = Some(d);
                        out.timers.push((TimerKind::DelayedAck, d));
                    }
                    None => {}
                }
            }
            _ => {}
        }
    }

    pub fn on_packet(&mut self, pkt: &Packet, now: SimTime, out: &mut Outbox) {
        let flags = pkt.header.flags;
        if flags.contains(TcpFlags::SYN | TcpFlags::ACK) {
            if self.conn_state == ConnState::Handshake {
                self.mode = accecn::resolve_negotiation(self.syn_flags, flags);
                if self.mode == EcnMode::AccEcn {
                    self.syn_reflection = accecn::decode_synack_feedback(flags);
                }
                self.peer_isn = pkt.header.seq;
                self.conn_state = ConnState::Established;
            }
            if self.conn_state == ConnState::Established {
                self.send_ack(out);
            }
            return;
        }
        if self.conn_state != ConnState::Established || pkt.payload_size == 0 {
            return;
        }
        self.on_data(pkt, now, out);
    }

    fn on_data(&mut self, pkt: &Packet, now: SimTime, out: &mut Outbox) {
        self.stats.segments_received += 1;
        if pkt.ecn == IpEcn::Ce {
            self.stats.ce_received += 1;
        }
        match self.mode {
            EcnMode::AccEcn => {
                accecn::receiver_on_data(pkt.ecn, &mut self.ace);
            }
            EcnMode::ClassicEcn => {
                if pkt.header.flags.contains(TcpFlags::CWR) {
                    self.ece_latch = false;
                }
                if pkt.ecn == IpEcn::Ce {
                    self.ece_latch = true;
                }
            }
            EcnMode::Off => {}
        }

        let seq = unwrap_seq(pkt.header.seq, self.peer_isn, self.rcv_nxt);
        let end = seq + pkt.payload_size as u64;
        let mut immediate = !self.out_of_order.is_empty();
        if seq == self.rcv_nxt {
            self.rcv_nxt = end;
            while let Some((&start, &stop)) = self.out_of_order.first_key_value() {
                if start > self.rcv_nxt {
                    break;
                }
                self.rcv_nxt = self.rcv_nxt.max(stop);
                self.out_of_order.pop_first();
            }
        } else if seq > self.rcv_nxt {
            self.out_of_order.insert(seq, end);
            immediate = true;
        } else {
            self.stats.duplicates += 1;
            immediate = true;
        }

        self.unacked_segments += 1;
        if immediate || self.unacked_segments >= self.cfg.ack_ratio {
            self.send_ack(out);
        } else if self.delack_deadline.is_none() {
            let d = now + self.cfg.delayed_ack_timeout;
            self.delack_deadline = Some(d);
            if self.delack_timer_at.is_none() {
                self.delack_timer_at = Some(d);
                out.timers.push((TimerKind::DelayedAck, d));
            }
        }
    }

    fn send_ack(&mut self, out: &mut Outbox) {
        let mut flags = TcpFlags::ACK;
        match self.mode {
            EcnMode::AccEcn => flags = flags.with_ace((self.ace.cep_r % 8) as u8),
            EcnMode::ClassicEcn if self.ece_latch => flags |= TcpFlags::ECE,
            _ => {}
        }
        let h = self.header(flags);
        out.packets.push(Packet::new(
            self.flow_id,
            Direction::Uplink,
            0,
            h,
            IpEcn::NotEct,
        ));
        self.unacked_segments = 0;
        self.delack_deadline = None;
        self.stats.acks_sent += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubic::{Cubic, CubicConfig};
    use crate::prague::{Prague, PragueConfig};

    const MSS: u64 = 1460;

    fn prague_sender() -> TcpSender {
        TcpSender::new(
            0,
            TcpConfig::default(),
            EcnMode::AccEcn,
            Box::new(Prague::new(PragueConfig::default())),
        )
    }

    fn cubic_sender(cap: EcnMode) -> TcpSender {
        TcpSender::new(
            1,
            TcpConfig::default(),
            cap,
            Box::new(Cubic::new(CubicConfig::default())),
        )
    }

    /// Runs the three-way handshake with zero network delay apart from a
    /// fixed RTT, returning the modes both sides settled on.
    fn handshake(
        client: &mut TcpReceiver,
        server: &mut TcpSender,
        rtt: SimTime,
    ) -> (EcnMode, EcnMode) {
        let mut out = Outbox::default();
        client.connect(SimTime::ZERO, &mut out);
        let syn = out.packets.remove(0);
        out.clear();
        server.on_syn(&syn, SimTime::ZERO, &mut out);
        let synack = out.packets.remove(0);
        out.clear();
        client.on_packet(&synack, SimTime::ZERO, &mut out);
        let ack = out.packets.remove(0);
        out.clear();
        server.on_ack(&ack, rtt, &mut out);
        (client.ecn_mode(), server.ecn_mode())
    }

    #[test]
    fn rto_formula_with_floor() {
        let mut r = RttEstimator::new(SimTime::from_millis(200), SimTime::from_secs(1));
        assert_eq!(r.rto(), SimTime::from_secs(1));
        r.srtt = Some(SimTime::from_millis(5));
        r.rttvar = SimTime::from_millis(1);
        assert_eq!(r.rto(), SimTime::from_millis(200));
        r.srtt = Some(SimTime::from_millis(300));
        assert_eq!(r.rto(), SimTime::from_millis(304));
    }

    #[test]
    fn seq_unwrap_across_32_bits() {
        let isn = u32::MAX - 10;
        let off = (1u64 << 32) + 5000;
        assert_eq!(unwrap_seq(wire_seq(off, isn), isn, off - 100_000), off);
        assert_eq!(unwrap_seq(wire_seq(0, isn), isn, 0), 0);
    }

    #[test]
    fn handshake_matrix_with_prague_server() {
        let mut c = TcpReceiver::new(0, TcpConfig::default(), EcnMode::AccEcn);
        let mut s = prague_sender();
        assert_eq!(
            handshake(&mut c, &mut s, SimTime::from_millis(5)),
            (EcnMode::AccEcn, EcnMode::AccEcn)
        );
        assert_eq!(s.conn_state(), ConnState::Established);
        assert_eq!(c.path_integrity(), Some(true));

        let mut c = TcpReceiver::new(0, TcpConfig::default(), EcnMode::AccEcn);
        let mut s = cubic_sender(EcnMode::ClassicEcn);
        assert_eq!(
            handshake(&mut c, &mut s, SimTime::from_millis(5)),
            (EcnMode::ClassicEcn, EcnMode::ClassicEcn)
        );

        let mut c = TcpReceiver::new(0, TcpConfig::default(), EcnMode::AccEcn);
        let mut s = cubic_sender(EcnMode::Off);
        assert_eq!(
            handshake(&mut c, &mut s, SimTime::from_millis(5)),
            (EcnMode::Off, EcnMode::Off)
        );
    }

    #[test]
    fn prague_data_is_ect1_and_paced() {
        let mut c = TcpReceiver::new(0, TcpConfig::default(), EcnMode::AccEcn);
        let mut s = prague_sender();
        let mut out = Outbox::default();
        c.connect(SimTime::ZERO, &mut out);
        let syn = out.packets.remove(0);
        s.on_syn(&syn, SimTime::ZERO, &mut out);
        let synack = out.packets.remove(0);
        c.on_packet(&synack, SimTime::ZERO, &mut out);
        let ack = out.packets.remove(0);
        out.clear();
        s.on_ack(&ack, SimTime::from_millis(5), &mut out);
        // one segment, then the pacer holds the rest
        assert_eq!(out.packets.len(), 1);
        assert_eq!(out.packets[0].ecn, IpEcn::Ect1);
        assert!(out.timers.iter().any(|(k, _)| *k == TimerKind::Pacing));
    }

    #[test]
    fn cubic_over_accecn_sends_ect0() {
        assert_eq!(data_codepoint(EcnMode::AccEcn, false), IpEcn::Ect0);
        assert_eq!(data_codepoint(EcnMode::ClassicEcn, false), IpEcn::Ect0);
        assert_eq!(data_codepoint(EcnMode::Off, true), IpEcn::NotEct);
    }

    #[test]
    fn pacing_gap_matches_rate() {
        // 1500 wire bytes at 12 Mb/s
        assert_eq!(
            SimTime::from_secs_f64(1500.0 * 8.0 / 12e6),
            SimTime::from_millis(1)
        );
    }

    fn ack_packet(flags: TcpFlags, ack_offset: u64) -> Packet {
        let h = TcpHeader {
            ack: wire_seq(ack_offset, 0),
            flags,
            ..Default::default()
        };
        Packet::new(0, Direction::Uplink, 0, h, IpEcn::NotEct)
    }

    /// Established Prague sender with `n` segments outstanding.
    fn sender_with_outstanding(n: u64) -> TcpSender {
        let mut c = TcpReceiver::new(0, TcpConfig::default(), EcnMode::AccEcn);
        let mut s = prague_sender();
        handshake(&mut c, &mut s, SimTime::from_millis(5));
        let mut out = Outbox::default();
        let mut now = SimTime::from_millis(5);
        while s.snd_nxt() < n * MSS {
            s.try_send(now, &mut out);
            now += SimTime::from_millis(1);
        }
        s
    }

    #[test]
    fn ack_with_ace_advance_builds_feedback() {
        let mut s = sender_with_outstanding(4);
        let mut out = Outbox::default();
        let ace = ((s.ace().cep_s + 1) % 8) as u8;
        s.on_ack(
            &ack_packet(TcpFlags::ACK.with_ace(ace), 2 * MSS),
            SimTime::from_millis(20),
            &mut out,
        );
        let fb = s.last_feedback().unwrap();
        assert_eq!(fb.acked_bytes, 2 * MSS);
        assert_eq!(fb.ce_delta, 1);
        assert!(fb.rtt_sample.is_some());

        let ace = (s.ace().cep_s % 8) as u8;
        s.on_ack(
            &ack_packet(TcpFlags::ACK.with_ace(ace), 3 * MSS),
            SimTime::from_millis(21),
            &mut out,
        );
        assert_eq!(s.last_feedback().unwrap().ce_delta, 0);
    }

    #[test]
    fn three_dupacks_trigger_fast_retransmit() {
        let mut s = sender_with_outstanding(6);
        let mut out = Outbox::default();
        let ace = (s.ace().cep_s % 8) as u8;
        let dup = ack_packet(TcpFlags::ACK.with_ace(ace), MSS);
        s.on_ack(&dup, SimTime::from_millis(20), &mut out);
        for i in 0..3 {
            out.clear();
            s.on_ack(&dup, SimTime::from_millis(21 + i), &mut out);
        }
        assert!(s.last_feedback().unwrap().is_loss_event);
        assert_eq!(s.conn_state(), ConnState::Recovery);
        assert_eq!(s.stats().fast_retransmits, 1);
        let retx = &out.packets[0];
        assert_eq!(unwrap_seq(retx.header.seq, 0, 0), MSS);
    }

    #[test]
    fn acks_outside_window_are_ignored() {
        let mut s = sender_with_outstanding(3);
        let mut out = Outbox::default();
        s.on_ack(
            &ack_packet(TcpFlags::ACK.with_ace(5), 100 * MSS),
            SimTime::from_millis(20),
            &mut out,
        );
        assert_eq!(s.stats().ignored_acks, 1);
        assert_eq!(s.snd_una(), 0);
    }

    #[test]
    fn timeout_signals_loss_and_resends_head() {
        let mut s = sender_with_outstanding(4);
        let mut out = Outbox::default();
        let deadline = s.rto_deadline().unwrap();
        s.on_timer(TimerKind::Rto, deadline, &mut out);
        assert_eq!(s.stats().timeouts, 1);
        assert_eq!(s.cca().state(), crate::cc::CaState::Loss);
        assert_eq!(s.cca().cwnd_segments(), 1.0);
        assert_eq!(unwrap_seq(out.packets[0].header.seq, 0, 0), 0);
        assert_eq!(s.bytes_in_flight(), MSS);
    }

    #[test]
    fn rto_cleared_when_everything_acked() {
        let mut s = sender_with_outstanding(2);
        let mut out = Outbox::default();
        let snd_nxt = s.snd_nxt();
        s.on_ack(
            &ack_packet(TcpFlags::ACK.with_ace(5), snd_nxt),
            SimTime::from_millis(30),
            &mut out,
        );
        // more data may go out immediately; if it did, a fresh deadline exists
        if s.snd_nxt() == s.snd_una() {
            assert!(s.rto_deadline().is_none());
        }
    }

    #[test]
    fn receiver_echoes_ace_on_every_ack() {
        let mut c = TcpReceiver::new(0, TcpConfig::default(), EcnMode::AccEcn);
        let mut s = prague_sender();
        handshake(&mut c, &mut s, SimTime::from_millis(5));
        let mut out = Outbox::default();
        for (i, ecn) in [IpEcn::Ect1, IpEcn::Ce, IpEcn::Ce, IpEcn::Ect1]
            .into_iter()
            .enumerate()
        {
            let h = TcpHeader {
                seq: wire_seq(i as u64 * MSS, 0),
                flags: TcpFlags::ACK,
                ..Default::default()
            };
            c.on_packet(
                &Packet::new(0, Direction::Downlink, MSS as u32, h, ecn),
                SimTime::ZERO,
                &mut out,
            );
        }
        let aces: Vec<u8> = out.packets.iter().map(|p| p.header.flags.ace()).collect();
        assert_eq!(aces, vec![5, 6, 7, 7]);
        assert_eq!(c.delivered_bytes(), 4 * MSS);
    }

    #[test]
    fn receiver_classic_ece_latch() {
        let mut c = TcpReceiver::new(0, TcpConfig::default(), EcnMode::ClassicEcn);
        let mut s = cubic_sender(EcnMode::ClassicEcn);
        handshake(&mut c, &mut s, SimTime::from_millis(5));
        let mut out = Outbox::default();
        let seg = |i: u64, flags: TcpFlags, ecn| {
            let h = TcpHeader {
                seq: wire_seq(i * MSS, 0),
                flags,
                ..Default::default()
            };
            Packet::new(0, Direction::Downlink, MSS as u32, h, ecn)
        };
        c.on_packet(&seg(0, TcpFlags::ACK, IpEcn::Ce), SimTime::ZERO, &mut out);
        c.on_packet(&seg(1, TcpFlags::ACK, IpEcn::Ect0), SimTime::ZERO, &mut out);
        c.on_packet(
            &seg(2, TcpFlags::ACK | TcpFlags::CWR, IpEcn::Ect0),
            SimTime::ZERO,
            &mut out,
        );
        let ece: Vec<bool> = out
            .packets
            .iter()
            .map(|p| p.header.flags.contains(TcpFlags::ECE))
            .collect();
        assert_eq!(ece, vec![true, true, false]);
    }

    #[test]
    fn receiver_reassembles_out_of_order() {
        let mut c = TcpReceiver::new(0, TcpConfig::default(), EcnMode::Off);
        let mut s = cubic_sender(EcnMode::Off);
        handshake(&mut c, &mut s, SimTime::from_millis(5));
        let mut out = Outbox::default();
        for i in [0u64, 2, 3, 1] {
            let h = TcpHeader {
                seq: wire_seq(i * MSS, 0),
                flags: TcpFlags::ACK,
                ..Default::default()
            };
            c.on_packet(
                &Packet::new(0, Direction::Downlink, MSS as u32, h, IpEcn::NotEct),
                SimTime::ZERO,
                &mut out,
            );
        }
        let acks: Vec<u64> = out
            .packets
            .iter()
            .map(|p| unwrap_seq(p.header.ack, 0, 0))
            .collect();
        assert_eq!(acks, vec![MSS, MSS, MSS, 4 * MSS]);
    }

    #[test]
    fn delayed_ack_ratio() {
        let cfg = TcpConfig {
            ack_ratio: 2,
            ..Default::default()
        };
        let mut c = TcpReceiver::new(0, cfg.clone(), EcnMode::Off);
        let mut s = TcpSender::new(
            0,
            cfg,
            EcnMode::Off,
            Box::new(Cubic::new(CubicConfig::default())),
        );
        handshake(&mut c, &mut s, SimTime::from_millis(5));
        let mut out = Outbox::default();
        let seg = |i: u64| {
            let h = TcpHeader {
                seq: wire_seq(i * MSS, 0),
                flags: TcpFlags::ACK,
                ..Default::default()
            };
            Packet::new(0, Direction::Downlink, MSS as u32, h, IpEcn::NotEct)
        };
        c.on_packet(&seg(0), SimTime::ZERO, &mut out);
        assert!(out.packets.is_empty());
        assert_eq!(out.timers[0].0, TimerKind::DelayedAck);
        c.on_packet(&seg(1), SimTime::ZERO, &mut out);
        assert_eq!(out.packets.len(), 1);
        out.clear();
        c.on_packet(&seg(2), SimTime::ZERO, &mut out);
        c.on_timer(TimerKind::DelayedAck, SimTime::from_millis(40), &mut out);
        assert_eq!(out.packets.len(), 1);
    }
}
