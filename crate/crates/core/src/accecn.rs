//! Accurate ECN over the TCP flag field: handshake negotiation with legacy
//! fallback, SYN/ACK reflection of the SYN's IP-ECN codepoint, and the
//! 3-bit ACE counter codec.

use crate::net::{IpEcn, TcpFlags};

/// Initial value of both CE packet counters once AccECN is negotiated.
pub const DEFAULT_CEP_INIT: u64 = 5;

/// Outcome of ECN negotiation; also used to describe what an endpoint is
/// willing to do before the handshake.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EcnMode {
    Off,
    ClassicEcn,
    AccEcn,
}

/// Per-socket CE counters. `cep_s` is the sender's running estimate of how
/// many of its packets were CE-marked, `cep_r` the receiver's exact count,
/// `delta` the marks learnt from the latest ACK.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AceCounters {
    pub cep_s: u64,
    pub cep_r: u64,
    pub delta: u64,
}

impl AceCounters {
    pub fn new(init: u64) -> Self {
        AceCounters {
            cep_s: init,
            cep_r: init,
            delta: 0,
        }
    }
}

impl Default for AceCounters {
    fn default() -> Self {
        Self::new(DEFAULT_CEP_INIT)
    }
}

const ECN_SETUP: TcpFlags = TcpFlags::CWR.union(TcpFlags::ECE);
const ACCECN_SETUP: TcpFlags = TcpFlags::AE.union(ECN_SETUP);

/// Flags of the client's SYN for the given request.
pub fn make_syn_flags(requesting: EcnMode) -> TcpFlags {
    match requesting {
        EcnMode::AccEcn => TcpFlags::SYN | ACCECN_SETUP,
        EcnMode::ClassicEcn => TcpFlags::SYN | ECN_SETUP,
        EcnMode::Off => TcpFlags::SYN,
    }
}

/// AE/CWR/ECE bits an AccECN server puts on its SYN/ACK to reflect the
/// codepoint the SYN arrived with.
pub fn encode_synack_feedback(received_syn_ip_ecn: IpEcn) -> TcpFlags {
    match received_syn_ip_ecn {
        IpEcn::NotEct => TcpFlags::CWR,
        IpEcn::Ect1 => TcpFlags::CWR | TcpFlags::ECE,
        IpEcn::Ect0 => TcpFlags::AE,
        IpEcn::Ce => TcpFlags::AE | TcpFlags::CWR,
    }
}

/// Inverse of [`encode_synack_feedback`]; `None` for the two patterns the
/// reflection never produces (000 and the legacy 001 reply, and 1x1).
pub fn decode_synack_feedback(flags: TcpFlags) -> Option<IpEcn> {
    match flags.ace() {
        0b010 => Some(IpEcn::NotEct),
        0b011 => Some(IpEcn::Ect1),
        0b100 => Some(IpEcn::Ect0),
        0b110 => Some(IpEcn::Ce),
        _ => None,
    }
}

/// SYN/ACK a server with capability `server` sends in reply to a SYN
/// carrying `syn_flags` that arrived with IP-ECN `syn_ecn`.
///
/// A legacy ECN server ignores AE and answers any ECN setup SYN with the
/// classic ECE-only reply.
pub fn make_synack_flags(server: EcnMode, syn_flags: TcpFlags, syn_ecn: IpEcn) -> TcpFlags {
    let base = TcpFlags::SYN | TcpFlags::ACK;
    match server {
        EcnMode::AccEcn if syn_flags.contains(ACCECN_SETUP) => {
            base | encode_synack_feedback(syn_ecn)
        }
        EcnMode::AccEcn | EcnMode::ClassicEcn if syn_flags.contains(ECN_SETUP) => {
            base | TcpFlags::ECE
        }
        _ => base,
    }
}

/// Mode both ends settle on after seeing the SYN and SYN/ACK flags.
pub fn resolve_negotiation(syn_flags: TcpFlags, synack_flags: TcpFlags) -> EcnMode {
    if syn_flags.contains(ACCECN_SETUP) && decode_synack_feedback(synack_flags).is_some() {
        return EcnMode::AccEcn;
    }
    let legacy_reply = synack_flags.contains(TcpFlags::ECE)
        && !synack_flags.intersects(TcpFlags::AE)
        && !synack_flags.intersects(TcpFlags::CWR);
    if syn_flags.contains(ECN_SETUP) && legacy_reply {
        EcnMode::ClassicEcn
    } else {
        EcnMode::Off
    }
}

/// Receiver side: count a CE arrival and return the ACE value
/// (`cep_r mod 8`) for the next ACK.
pub fn receiver_on_data(pkt_ecn: IpEcn, counters: &mut AceCounters) -> u8 {
    if pkt_ecn == IpEcn::Ce {
        counters.cep_r += 1;
    }
    (counters.cep_r % 8) as u8
}

/// Sender side: number of new CE marks signalled by `ace_field`, given the
/// local `cep_s` and the `newly_acked` segment count of this ACK.
///
/// With fewer than eight newly acknowledged segments the mod-8 difference is
/// unambiguous. Otherwise the counter may have wrapped unseen, so the
/// largest count no greater than `newly_acked` that is congruent to the
/// mod-8 difference is assumed.
pub fn ace_delta(ace_field: u8, cep_s: u64, newly_acked: u64) -> u64 {
    let ace = (ace_field & 0b111) as u64;
    let delta = (ace + 8 - cep_s % 8) % 8;
    if newly_acked >= 8 {
        newly_acked - (newly_acked - delta) % 8
    } else {
        delta
    }
}

/// [`ace_delta`] plus the counter update: `cep_s += delta`, `counters.delta
/// = delta`.
pub fn decode_ace_delta(ace_field: u8, counters: &mut AceCounters, newly_acked: u64) -> u64 {
    let delta = ace_delta(ace_field, counters.cep_s, newly_acked);
    counters.cep_s += delta;
    counters.delta = delta;
    delta
}
