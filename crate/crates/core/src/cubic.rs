//! CUBIC, the classic competitor. Reacts to loss and to classic ECN echoes
//! with a single multiplicative decrease per round trip.

use crate::cc::{CaState, CcaFeedback, CongestionControl};
use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq)]
pub struct CubicConfig {
    pub beta: f64,
    pub c: f64,
    pub initial_cwnd_segments: f64,
    pub segment_size: u32,
}

impl Default for CubicConfig {
    fn default() -> Self {
        CubicConfig {
            beta: 0.7,
            c: 0.4,
            initial_cwnd_segments: 10.0,
            segment_size: crate::net::DEFAULT_MSS,
        }
    }
}

const MIN_CWND_SEGMENTS: f64 = 2.0;

/// `W(t) = c (t - k)^3 + w_max`, with `t` in seconds.
pub fn cubic_window(t_since_epoch: f64, k: f64, w_max: f64, c: f64) -> f64 {
    c * (t_since_epoch - k).powi(3) + w_max
}

/// Time for the cubic curve to climb from `w_max * beta` back to `w_max`.
pub fn cubic_k(w_max: f64, beta: f64, c: f64) -> f64 {
    (w_max * (1.0 - beta) / c).cbrt()
}

#[derive(Clone, Debug)]
pub struct Cubic {
    cfg: CubicConfig,
    cwnd: f64,
    ssthresh: f64,
    w_max: f64,
    k: f64,
    epoch_start: Option<SimTime>,
    /// Reno-friendly estimate.
    w_est: f64,
    srtt: Option<SimTime>,
    last_reduction: Option<SimTime>,
    state: CaState,
    timed_out: bool,
}

impl Cubic {
    pub fn new(cfg: CubicConfig) -> Self {
        Cubic {
            cwnd: cfg.initial_cwnd_segments.max(1.0),
            ssthresh: f64::INFINITY,
            w_max: 0.0,
            k: 0.0,
            epoch_start: None,
            w_est: 0.0,
            srtt: None,
            last_reduction: None,
            state: CaState::Open,
            timed_out: false,
            cfg,
        }
    }

    pub fn cwnd(&self) -> f64 {
        self.cwnd
    }

    pub fn set_cwnd(&mut self, segments: f64) {
        self.cwnd = segments.max(1.0);
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn in_slow_start(&self) -> bool {
        self.cwnd < self.ssthresh
    }

    fn mss(&self) -> f64 {
        self.cfg.segment_size as f64
    }

    fn round_elapsed(&self, now: SimTime) -> bool {
        match (self.last_reduction, self.srtt) {
            (None, _) => true,
            (Some(at), Some(srtt)) => now >= at + srtt,
            (Some(_), None) => false,
        }
    }

    /// Multiplicative decrease on loss or ECE. Ignored if a reduction
    /// already happened within the last smoothed RTT. Returns the window.
    pub fn on_classic_congestion(&mut self, now: SimTime) -> f64 {
        if !self.round_elapsed(now) {
            return self.cwnd;
        }
        self.w_max = self.cwnd;
        self.cwnd = (self.cwnd * self.cfg.beta).max(1.0);
        self.ssthresh = self.cwnd.max(MIN_CWND_SEGMENTS);
        self.epoch_start = None;
        self.last_reduction = Some(now);
        self.cwnd
    }

    fn start_epoch(&mut self, now: SimTime) {
        self.epoch_start = Some(now);
        if self.cwnd < self.w_max {
            self.k = ((self.w_max - self.cwnd) / self.cfg.c).cbrt();
        } else {
            self.k = 0.0;
            self.w_max = self.cwnd;
        }
        self.w_est = self.cwnd;
    }

    fn congestion_avoidance(&mut self, now: SimTime, acked_segments: f64) {
        let epoch = match self.epoch_start {
            Some(t) => t,
            None => {
                self.start_epoch(now);
                now
            }
        };
        let rtt = self.srtt.map(|r| r.as_secs_f64()).unwrap_or(0.1);
        let t = (now - epoch).as_secs_f64();
        let beta = self.cfg.beta;
        self.w_est += 3.0 * (1.0 - beta) / (1.0 + beta) * acked_segments / self.cwnd;
        let target = cubic_window(t + rtt, self.k, self.w_max, self.cfg.c).min(1.5 * self.cwnd);
        if target < self.w_est {
            self.cwnd = self.cwnd.max(self.w_est);
        } else if target > self.cwnd {
            self.cwnd += (target - self.cwnd) / self.cwnd * acked_segments;
        }
    }

    fn update_srtt(&mut self, sample: SimTime) {
        self.srtt = Some(match self.srtt {
            None => sample,
            Some(old) => {
                let ns = (old.as_nanos() as f64 * 7.0 + sample.as_nanos() as f64) / 8.0;
                SimTime::from_nanos(ns.round() as u64)
            }
        });
    }
}

impl CongestionControl for Cubic {
    fn name(&self) -> &'static str {
        "cubic"
    }

    fn is_scalable(&self) -> bool {
        false
    }

    fn on_connected(&mut self, _now: SimTime, rtt: SimTime) {
        self.update_srtt(rtt);
    }

    fn on_feedback(&mut self, now: SimTime, fb: &CcaFeedback, _bytes_in_flight: u64) {
        if let Some(sample) = fb.rtt_sample {
            self.update_srtt(sample);
        }
        if fb.is_loss_event && self.state != CaState::Loss {
            // a loss always reduces, even inside an ECE round
            self.last_reduction = None;
            self.on_classic_congestion(now);
            self.state = CaState::Loss;
            return;
        }
        if fb.ce_delta > 0 {
            self.on_classic_congestion(now);
            return;
        }
        if self.state == CaState::Loss && !self.timed_out {
            return;
        }
        let acked = fb.acked_bytes as f64 / self.mss();
        if acked == 0.0 {
            return;
        }
        if self.in_slow_start() {
            let room = (self.ssthresh - self.cwnd).max(0.0);
            self.cwnd += acked.min(room);
            let rest = acked - acked.min(room);
            if rest > 0.0 {
                self.congestion_avoidance(now, rest);
            }
        } else {
            self.congestion_avoidance(now, acked);
        }
    }

    fn on_timeout(&mut self, now: SimTime) {
        self.w_max = self.cwnd;
        self.ssthresh = (self.cwnd * self.cfg.beta).max(MIN_CWND_SEGMENTS);
        self.cwnd = 1.0;
        self.epoch_start = None;
        self.last_reduction = Some(now);
        self.state = CaState::Loss;
        self.timed_out = true;
    }

    fn on_recovery_exit(&mut self, _now: SimTime) {
        self.state = CaState::Open;
        self.timed_out = false;
    }

    fn cwnd_bytes(&self) -> u64 {
        let floor = if self.timed_out {
            1.0
        } else {
            MIN_CWND_SEGMENTS
        };
        (self.cwnd.floor().max(floor) * self.mss()) as u64
    }

    fn ssthresh_bytes(&self) -> u64 {
        if self.ssthresh.is_finite() {
            (self.ssthresh * self.mss()) as u64
        } else {
            u64::MAX
        }
    }

    fn cwnd_segments(&self) -> f64 {
        self.cwnd
    }

    fn pacing_rate_bps(&self) -> Option<f64> {
        None
    }

    fn state(&self) -> CaState {
        self.state
    }
}
