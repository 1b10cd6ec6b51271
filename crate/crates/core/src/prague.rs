//! TCP Prague.
//!
//! DCTCP-style scalable controller: an EWMA `alpha` of the CE-marked byte
//! fraction, updated on a fixed `target_rtt` clock rather than per RTT,
//! drives a proportional reduction `cwnd * (1 - alpha/2)`. The window is a
//! fractional segment count and is rounded up when the socket asks how much
//! it may send. Sending is always paced.

use crate::cc::{CaState, CcaFeedback, CongestionControl};
use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq)]
pub struct PragueConfig {
    /// EWMA gain for alpha.
    pub g: f64,
    /// Length of the alpha update interval and of a CWR round.
    pub target_rtt: SimTime,
    pub initial_alpha: f64,
    pub initial_cwnd_segments: f64,
    pub ca_pacing_gain: f64,
    pub ss_pacing_gain: f64,
    /// Multiplicative decrease applied on packet loss.
    pub loss_beta: f64,
    /// RTT-independence of the additive increase. Below `target_rtt` the
    /// per-ACK increase is scaled by `(srtt / target_rtt)^exponent`. 2.0
    /// gives the same rate growth per second as a flow at the target RTT,
    /// 0.0 is plain one segment per RTT.
    pub rtt_scaling_exponent: f64,
    /// Keep growing the window during the round after a CE reduction.
    /// Off by default, as in DCTCP where growth waits for the round to end.
    pub increase_in_cwr: bool,
    pub segment_size: u32,
}

impl Default for PragueConfig {
    fn default() -> Self {
        PragueConfig {
            g: 1.0 / 16.0,
            target_rtt: SimTime::from_millis(25),
            initial_alpha: 1.0,
            initial_cwnd_segments: 10.0,
            ca_pacing_gain: 1.2,
            ss_pacing_gain: 2.0,
            loss_beta: 0.5,
            rtt_scaling_exponent: 1.25,
            increase_in_cwr: false,
            segment_size: crate::net::DEFAULT_MSS,
        }
    }
}

/// Effective window never drops below this many segments outside Loss.
const MIN_EFFECTIVE_SEGMENTS: f64 = 2.0;
/// Weight of a new sample in the pacing RTT filter.
const HSRTT_SHIFT: f64 = 128.0;

#[derive(Clone, Copy, Debug, PartialEq)]
enum SubState {
    Open,
    Cwr { until: SimTime },
    Loss { timeout: bool },
}

#[derive(Clone, Debug)]
pub struct Prague {
    cfg: PragueConfig,
    alpha: f64,
    frac_cwnd: f64,
    /// In segments; infinite until the first reduction.
    ssthresh: f64,
    hsrtt: Option<SimTime>,
    next_alpha_update: Option<SimTime>,
    bytes_acked_interval: u64,
    bytes_marked_interval: u64,
    sub_state: SubState,
    pacing_rate: Option<f64>,
}

impl Prague {
    pub fn new(cfg: PragueConfig) -> Self {
        Prague {
            alpha: cfg.initial_alpha.clamp(0.0, 1.0),
            frac_cwnd: cfg.initial_cwnd_segments.max(1.0),
            ssthresh: f64::INFINITY,
            hsrtt: None,
            next_alpha_update: None,
            bytes_acked_interval: 0,
            bytes_marked_interval: 0,
            sub_state: SubState::Open,
            pacing_rate: None,
            cfg,
        }
    }

    pub fn config(&self) -> &PragueConfig {
        &self.cfg
    }

    pub fn frac_cwnd(&self) -> f64 {
        self.frac_cwnd
    }

    pub fn set_frac_cwnd(&mut self, segments: f64) {
        self.frac_cwnd = segments.max(1.0);
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha.clamp(0.0, 1.0);
    }

    pub fn hsrtt(&self) -> Option<SimTime> {
        self.hsrtt
    }

    pub fn set_hsrtt(&mut self, hsrtt: SimTime) {
        self.hsrtt = Some(hsrtt);
    }

    pub fn in_slow_start(&self) -> bool {
        self.frac_cwnd < self.ssthresh
    }

    /// Marked fraction of the current interval, if anything was acked.
    pub fn marked_fraction(&self) -> Option<f64> {
        (self.bytes_acked_interval > 0)
            .then(|| self.bytes_marked_interval as f64 / self.bytes_acked_interval as f64)
    }

    fn mss(&self) -> f64 {
        self.cfg.segment_size as f64
    }

    pub fn accumulate_feedback(&mut self, fb: &CcaFeedback) {
        self.bytes_acked_interval += fb.acked_bytes;
        self.bytes_marked_interval += fb.ce_delta * self.cfg.segment_size as u64;
        self.bytes_marked_interval = self.bytes_marked_interval.min(self.bytes_acked_interval);
    }

    /// Folds the interval's marked fraction into alpha and starts the next
    /// interval. Returns the new alpha.
    pub fn update_alpha(&mut self, now: SimTime) -> f64 {
        let f = self.marked_fraction().unwrap_or(0.0);
        let g = self.cfg.g;
        self.alpha = ((1.0 - g) * self.alpha + g * f).clamp(0.0, 1.0);
        self.bytes_acked_interval = 0;
        self.bytes_marked_interval = 0;
        let mut next = self.next_alpha_update.unwrap_or(now) + self.cfg.target_rtt;
        while next <= now {
            next += self.cfg.target_rtt;
        }
        self.next_alpha_update = Some(next);
        self.alpha
    }

    /// Proportional reduction. Returns the new fractional window.
    pub fn on_ce_reduction(&mut self) -> f64 {
        self.frac_cwnd = (self.frac_cwnd * (1.0 - self.alpha / 2.0)).max(1.0);
        self.ssthresh = self.frac_cwnd;
        self.frac_cwnd
    }

    /// Reduces at most once per `target_rtt` round.
    pub fn enter_cwr(&mut self, now: SimTime) {
        if self.sub_state != SubState::Open {
            return;
        }
        self.on_ce_reduction();
        self.sub_state = SubState::Cwr {
            until: now + self.cfg.target_rtt,
        };
    }

    /// Loss (fast retransmit): classic multiplicative decrease.
    pub fn enter_loss(&mut self) {
        if matches!(self.sub_state, SubState::Loss { .. }) {
            return;
        }
        self.frac_cwnd = (self.frac_cwnd * self.cfg.loss_beta).max(1.0);
        self.ssthresh = self.frac_cwnd;
        self.sub_state = SubState::Loss { timeout: false };
    }

    pub fn effective_cwnd_bytes(&self) -> u64 {
        let mut segments = self.frac_cwnd.ceil();
        if !matches!(self.sub_state, SubState::Loss { timeout: true }) {
            segments = segments.max(MIN_EFFECTIVE_SEGMENTS);
        }
        (segments * self.mss()) as u64
    }

    fn ai_scale(&self) -> f64 {
        match self.hsrtt {
            Some(h) if h < self.cfg.target_rtt && self.cfg.rtt_scaling_exponent > 0.0 => {
                (h.as_secs_f64() / self.cfg.target_rtt.as_secs_f64())
                    .powf(self.cfg.rtt_scaling_exponent)
            }
            _ => 1.0,
        }
    }

    /// Additive increase; slow start below ssthresh.
    pub fn on_ack_increase(&mut self, fb: &CcaFeedback) {
        if matches!(self.sub_state, SubState::Loss { timeout: false }) {
            return;
        }
        if !self.cfg.increase_in_cwr && matches!(self.sub_state, SubState::Cwr { .. }) {
            return;
        }
        let acked_segments = fb.acked_bytes as f64 / self.mss();
        if self.in_slow_start() {
            let room = (self.ssthresh - self.frac_cwnd).max(0.0);
            let ss = acked_segments.min(room);
            self.frac_cwnd += ss + (acked_segments - ss) / self.frac_cwnd.max(1.0);
        } else {
            self.frac_cwnd += self.ai_scale() * acked_segments / self.frac_cwnd;
        }
    }

    /// `hsrtt += (sample - hsrtt) / 128`; the first sample initialises it.
    pub fn update_rtt_ewma(&mut self, sample: SimTime) -> Option<SimTime> {
        if sample == SimTime::ZERO {
            return self.hsrtt;
        }
        let next = match self.hsrtt {
            None => sample,
            Some(old) => {
                let old_ns = old.as_nanos() as f64;
                let new_ns = old_ns + (sample.as_nanos() as f64 - old_ns) / HSRTT_SHIFT;
                SimTime::from_nanos(new_ns.round() as u64)
            }
        };
        self.hsrtt = Some(next);
        self.hsrtt
    }

    /// Rate from the whole segments in flight over `hsrtt`, scaled by the
    /// slow-start or congestion-avoidance gain. `None` before any RTT
    /// sample.
    ///
    /// The segment count is never taken below the window: pacing on the
    /// flight alone feeds back on itself (each ACK shrinks the flight, which
    /// slows the pacer, which shrinks the flight) and settles at a couple
    /// of segments per RTT.
    pub fn update_pacing_rate(&mut self, bytes_in_flight: u64) -> Option<f64> {
        let hsrtt = self.hsrtt?.as_secs_f64();
        if hsrtt <= 0.0 {
            return self.pacing_rate;
        }
        let in_flight = (bytes_in_flight / self.cfg.segment_size as u64) as f64;
        let segments = in_flight.max(self.frac_cwnd.ceil()).max(1.0);
        let base = segments * self.mss() * 8.0 / hsrtt;
        let gain = if self.in_slow_start() {
            self.cfg.ss_pacing_gain
        } else {
            self.cfg.ca_pacing_gain
        };
        self.pacing_rate = Some(base * gain);
        self.pacing_rate
    }
}

impl CongestionControl for Prague {
    fn name(&self) -> &'static str {
        "prague"
    }

    fn is_scalable(&self) -> bool {
        true
    }

    fn on_connected(&mut self, now: SimTime, rtt: SimTime) {
        self.update_rtt_ewma(rtt);
        self.next_alpha_update = Some(now + self.cfg.target_rtt);
        self.update_pacing_rate(0);
    }

    fn on_feedback(&mut self, now: SimTime, fb: &CcaFeedback, bytes_in_flight: u64) {
        if let Some(sample) = fb.rtt_sample {
            self.update_rtt_ewma(sample);
        }
        if fb.is_loss_event {
            self.enter_loss();
        }
        self.accumulate_feedback(fb);
        match self.next_alpha_update {
            Some(t) if now >= t => {
                self.update_alpha(now);
            }
            None => self.next_alpha_update = Some(now + self.cfg.target_rtt),
            _ => {}
        }
        if let SubState::Cwr { until } = self.sub_state {
            if now >= until {
                self.sub_state = SubState::Open;
            }
        }
        if fb.ce_delta > 0 {
            self.enter_cwr(now);
        } else {
            self.on_ack_increase(fb);
        }
        self.update_pacing_rate(bytes_in_flight);
    }

    fn on_timeout(&mut self, _now: SimTime) {
        self.ssthresh = (self.frac_cwnd * self.cfg.loss_beta).max(MIN_EFFECTIVE_SEGMENTS);
        self.frac_cwnd = 1.0;
        self.sub_state = SubState::Loss { timeout: true };
    }

    fn on_recovery_exit(&mut self, _now: SimTime) {
        if matches!(self.sub_state, SubState::Loss { .. }) {
            self.sub_state = SubState::Open;
        }
    }

    fn cwnd_bytes(&self) -> u64 {
        self.effective_cwnd_bytes()
    }

    fn ssthresh_bytes(&self) -> u64 {
        if self.ssthresh.is_finite() {
            (self.ssthresh * self.mss()) as u64
        } else {
            u64::MAX
        }
    }

    fn cwnd_segments(&self) -> f64 {
        self.frac_cwnd
    }

    fn pacing_rate_bps(&self) -> Option<f64> {
        self.pacing_rate
    }

    fn state(&self) -> CaState {
        match self.sub_state {
            SubState::Open => CaState::Open,
            SubState::Cwr { .. } => CaState::Cwr,
            SubState::Loss { .. } => CaState::Loss,
        }
    }

    fn alpha(&self) -> Option<f64> {
        Some(self.alpha)
    }
}
