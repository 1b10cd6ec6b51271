//! Interface between the TCP socket and a congestion controller.
//!
//! The socket decodes all ECN signalling itself and hands the controller a
//! [`CcaFeedback`] per ACK, so controllers never touch header bits.

use crate::sim::SimTime;

/// What one ACK tells the controller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CcaFeedback {
    /// Bytes newly acknowledged (0 for a duplicate ACK).
    pub acked_bytes: u64,
    /// CE marks learnt from this ACK: the AccECN delta, or 1 when a classic
    /// ECE echo is present.
    pub ce_delta: u64,
    pub rtt_sample: Option<SimTime>,
    /// Third duplicate ACK: fast retransmit has been triggered.
    pub is_loss_event: bool,
}

/// Controller sub-state, shared by all implementations for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaState {
    Open,
    Cwr,
    Loss,
}

pub trait CongestionControl: Send {
    fn name(&self) -> &'static str;

    /// Scalable controllers send ECT(1) when AccECN is negotiated.
    fn is_scalable(&self) -> bool;

    /// Handshake completed; `rtt` is the SYN/ACK round trip.
    fn on_connected(&mut self, now: SimTime, rtt: SimTime);

    fn on_feedback(&mut self, now: SimTime, fb: &CcaFeedback, bytes_in_flight: u64);

    /// Retransmission timeout fired.
    fn on_timeout(&mut self, now: SimTime);

    /// Every segment outstanding at the loss has been acknowledged.
    fn on_recovery_exit(&mut self, now: SimTime);

    /// Window the socket may fill, in bytes.
    fn cwnd_bytes(&self) -> u64;

    fn ssthresh_bytes(&self) -> u64;

    /// Congestion window in (possibly fractional) segments.
    fn cwnd_segments(&self) -> f64;

    /// `None` means the socket does not pace.
    fn pacing_rate_bps(&self) -> Option<f64>;

    fn state(&self) -> CaState;

    /// Controller-specific congestion estimate, if it keeps one.
    fn alpha(&self) -> Option<f64> {
        None
    }
}
