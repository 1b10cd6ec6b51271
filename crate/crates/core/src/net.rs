//! Packets, the TCP header with its 16-bit flag field, links and the
//! dumbbell topology description.

use std::fmt;

use crate::error::WireError;
use crate::sim::SimTime;

/// IP header overhead plus a TCP header without options.
pub const HEADER_OVERHEAD: u32 = 40;
pub const DEFAULT_MSS: u32 = 1460;
pub const DEFAULT_MTU: u32 = 1500;

/// Two-bit ECN field of the IP header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IpEcn {
    NotEct = 0b00,
    Ect1 = 0b01,
    Ect0 = 0b10,
    Ce = 0b11,
}

impl IpEcn {
    pub const ALL: [IpEcn; 4] = [IpEcn::NotEct, IpEcn::Ect1, IpEcn::Ect0, IpEcn::Ce];

    pub fn bits(self) -> u8 {
        self as u8
    }

    pub fn from_bits(bits: u8) -> IpEcn {
        match bits & 0b11 {
            0b00 => IpEcn::NotEct,
            0b01 => IpEcn::Ect1,
            0b10 => IpEcn::Ect0,
            _ => IpEcn::Ce,
        }
    }

    pub fn is_ect(self) -> bool {
        matches!(self, IpEcn::Ect0 | IpEcn::Ect1)
    }

    /// ECT(1) and CE belong to the low-latency class.
    pub fn is_l4s(self) -> bool {
        matches!(self, IpEcn::Ect1 | IpEcn::Ce)
    }
}

/// TCP control bits, widened to 16 bits so AE fits at 256.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct TcpFlags(u16);

impl TcpFlags {
    pub const NONE: TcpFlags = TcpFlags(0);
    pub const FIN: TcpFlags = TcpFlags(1);
    pub const SYN: TcpFlags = TcpFlags(2);
    pub const RST: TcpFlags = TcpFlags(4);
    pub const PSH: TcpFlags = TcpFlags(8);
    pub const ACK: TcpFlags = TcpFlags(16);
    pub const URG: TcpFlags = TcpFlags(32);
    pub const ECE: TcpFlags = TcpFlags(64);
    pub const CWR: TcpFlags = TcpFlags(128);
    pub const AE: TcpFlags = TcpFlags(256);

    pub const MASK: u16 = 0x01ff;

    pub fn from_bits(bits: u16) -> Result<TcpFlags, WireError> {
        if bits & !Self::MASK != 0 {
            return Err(WireError::ReservedFlagBits(bits));
        }
        Ok(TcpFlags(bits))
    }

    pub const fn bits(self) -> u16 {
        self.0
    }

    pub const fn union(self, other: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | other.0)
    }

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn intersects(self, other: TcpFlags) -> bool {
        self.0 & other.0 != 0
    }

    pub fn set(&mut self, other: TcpFlags, on: bool) {
        if on {
            self.0 |= other.0;
        } else {
            self.0 &= !other.0;
        }
    }

    /// The 3-bit ACE field: AE·4 + CWR·2 + ECE.
    pub fn ace(self) -> u8 {
        ((self.contains(Self::AE) as u8) << 2)
            | ((self.contains(Self::CWR) as u8) << 1)
            | self.contains(Self::ECE) as u8
    }

    /// Replaces AE, CWR and ECE with the low three bits of `value`.
    pub fn with_ace(mut self, value: u8) -> TcpFlags {
        self.set(Self::AE, value & 0b100 != 0);
        self.set(Self::CWR, value & 0b010 != 0);
        self.set(Self::ECE, value & 0b001 != 0);
        self
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;

    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

impl std::ops::BitOrAssign for TcpFlags {
    fn bitor_assign(&mut self, rhs: TcpFlags) {
        self.0 |= rhs.0;
    }
}

impl fmt::Debug for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [&str; 9] = ["FIN", "SYN", "RST", "PSH", "ACK", "URG", "ECE", "CWR", "AE"];
        let set: Vec<&str> = NAMES
            .iter()
            .enumerate()
            .filter(|(i, _)| self.0 & (1 << i) != 0)
            .map(|(_, n)| *n)
            .collect();
        write!(f, "TcpFlags({})", set.join("|"))
    }
}

/// ACE value of a flag set.
pub fn ace_value(flags: TcpFlags) -> u8 {
    flags.ace()
}

/// TCP header without options. Sequence numbers are the 32-bit wire values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TcpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub window: u16,
}

impl TcpHeader {
    pub const LEN: usize = 20;

    /// Standard 20-byte layout. The fourth 16-bit word holds the data offset
    /// in its top nibble and the nine flag bits at the bottom, so AE lands
    /// on the former NS bit.
    pub fn serialize(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[0..2].copy_from_slice(&self.src_port.to_be_bytes());
        out[2..4].copy_from_slice(&self.dst_port.to_be_bytes());
        out[4..8].copy_from_slice(&self.seq.to_be_bytes());
        out[8..12].copy_from_slice(&self.ack.to_be_bytes());
        let word = (5u16 << 12) | self.flags.bits();
        out[12..14].copy_from_slice(&word.to_be_bytes());
        out[14..16].copy_from_slice(&self.window.to_be_bytes());
        // checksum and urgent pointer stay zero
        out
    }

    pub fn deserialize(buf: &[u8]) -> Result<TcpHeader, WireError> {
        if buf.len() < Self::LEN {
            return Err(WireError::Truncated(buf.len()));
        }
        let u16_at = |i: usize| u16::from_be_bytes([buf[i], buf[i + 1]]);
        let u32_at = |i: usize| u32::from_be_bytes([buf[i], buf[i + 1], buf[i + 2], buf[i + 3]]);
        let word = u16_at(12);
        let offset = word >> 12;
        if offset != 5 {
            return Err(WireError::DataOffset(offset as u8));
        }
        Ok(TcpHeader {
            src_port: u16_at(0),
            dst_port: u16_at(2),
            seq: u32_at(4),
            ack: u32_at(8),
            flags: TcpFlags::from_bits(word & 0x0fff)?,
            window: u16_at(14),
        })
    }
}

/// Which way a packet travels through the dumbbell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Server to client, crosses the AQM.
    Downlink,
    /// Client to server (SYN, ACKs).
    Uplink,
}

/// A simulated frame.
#[derive(Clone, Debug)]
pub struct Packet {
    pub flow_id: usize,
    pub direction: Direction,
    pub payload_size: u32,
    pub header: TcpHeader,
    pub ecn: IpEcn,
    /// Stamped by the queue that currently holds the packet.
    pub enqueue_time: SimTime,
    /// Index of the next link on the route.
    pub hop: u8,
}

impl Packet {
    pub fn new(
        flow_id: usize,
        direction: Direction,
        payload_size: u32,
        header: TcpHeader,
        ecn: IpEcn,
    ) -> Self {
        Packet {
            flow_id,
            direction,
            payload_size,
            header,
            ecn,
            enqueue_time: SimTime::ZERO,
            hop: 0,
        }
    }

    pub fn wire_size(&self) -> u32 {
        self.payload_size + HEADER_OVERHEAD
    }

    /// Marks the packet CE. Only ECN-capable packets can be marked.
    pub fn mark_ce(&mut self) -> bool {
        if self.ecn.is_ect() {
            self.ecn = IpEcn::Ce;
            true
        } else {
            false
        }
    }
}

/// A one-directional point-to-point link.
#[derive(Clone, Debug)]
pub struct Link {
    pub rate_bps: u64,
    pub propagation_delay: SimTime,
    busy_until: SimTime,
}

impl Link {
    pub fn new(rate_bps: u64, propagation_delay: SimTime) -> Self {
        assert!(rate_bps > 0);
        Link {
            rate_bps,
            propagation_delay,
            busy_until: SimTime::ZERO,
        }
    }

    pub fn serialization(&self, wire_bytes: u32) -> SimTime {
        SimTime::transmission(wire_bytes as u64, self.rate_bps)
    }

    pub fn is_busy(&self, now: SimTime) -> bool {
        self.busy_until > now
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    /// Starts serializing `pkt` no earlier than `now` and behind any frame
    /// already on the wire. Returns `(serialization_done, delivery_time)`.
    pub fn transmit(&mut self, now: SimTime, pkt: &Packet) -> (SimTime, SimTime) {
        let start = now.max(self.busy_until);
        let done = start + self.serialization(pkt.wire_size());
        self.busy_until = done;
        (done, done + self.propagation_delay)
    }
}

/// Link parameters of the two-client/two-server dumbbell.
#[derive(Clone, Debug, PartialEq)]
pub struct DumbbellTopology {
    pub access_rate_bps: u64,
    pub access_delay: SimTime,
    pub bottleneck_rate_bps: u64,
    /// One-way propagation delay of the bottleneck, applied in both
    /// directions.
    pub bottleneck_delay: SimTime,
    pub pairs: usize,
}

impl DumbbellTopology {
    /// Base round-trip propagation delay (no serialization, no queueing).
    pub fn base_rtt(&self) -> SimTime {
        let one_way = self.access_delay + self.bottleneck_delay + self.access_delay;
        one_way + one_way
    }

    /// Round trip of one full data segment and its ACK through an empty
    /// network.
    pub fn unloaded_rtt(&self, mss: u32) -> SimTime {
        let data = mss + HEADER_OVERHEAD;
        let ack = HEADER_OVERHEAD;
        let ser = |bytes: u32, rate: u64| SimTime::transmission(bytes as u64, rate);
        self.base_rtt()
            + ser(data, self.access_rate_bps) * 2
            + ser(data, self.bottleneck_rate_bps)
            + ser(ack, self.access_rate_bps) * 2
            + ser(ack, self.bottleneck_rate_bps)
    }
}

/// Wires a dumbbell around a bottleneck. `delay_is_rtt` selects whether
/// `delay` is the base round-trip time (split evenly between the two
/// directions of the bottleneck) or its one-way propagation delay.
pub fn build_dumbbell(
    bottleneck_rate_bps: u64,
    delay: SimTime,
    delay_is_rtt: bool,
) -> Result<DumbbellTopology, crate::error::ConfigError> {
    if bottleneck_rate_bps == 0 {
        return Err(crate::error::ConfigError::invalid(
            "bottleneck rate must be positive",
        ));
    }
    let bottleneck_delay = if delay_is_rtt {
        SimTime::from_nanos(delay.as_nanos() / 2)
    } else {
        delay
    };
    Ok(DumbbellTopology {
        access_rate_bps: 1_000_000_000,
        access_delay: SimTime::ZERO,
        bottleneck_rate_bps,
        bottleneck_delay,
        pairs: 2,
    })
}
