//! Scenario configuration and its text format.
//!
//! The format is flat `key = value` lines grouped under `[section]`
//! headers. `#` starts a comment. Each `[flow]` header adds one flow; the
//! other sections may appear once. Unknown sections and keys are errors.
//!
//! ```text
//! name = scenario2
//!
//! [topology]
//! rate_mbps = 10
//! delay_ms = 30
//!
//! [flow]
//! cca = prague
//!
//! [flow]
//! cca = cubic
//! ecn = off
//! ```

use std::path::PathBuf;

use crate::accecn::EcnMode;
use crate::cubic::CubicConfig;
use crate::dualpi2::{DualPi2Config, SchedulerKind};
use crate::error::ConfigError;
use crate::net::{DEFAULT_MTU, HEADER_OVERHEAD};
use crate::prague::PragueConfig;
use crate::sim::SimTime;
use crate::tcp::TcpConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcaKind {
    Prague,
    Cubic,
}

impl CcaKind {
    pub fn name(self) -> &'static str {
        match self {
            CcaKind::Prague => "prague",
            CcaKind::Cubic => "cubic",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    /// Used in metric and file names; defaults to the controller name.
    pub label: String,
    pub cca: CcaKind,
    /// What the client asks for in its SYN.
    pub client_ecn: EcnMode,
    /// What the server is willing to negotiate.
    pub server_ecn: EcnMode,
    pub start: SimTime,
    /// `None` runs to the end of the simulation.
    pub stop: Option<SimTime>,
}

impl FlowConfig {
    /// Prague flows negotiate AccECN; CUBIC flows default to no ECN, as a
    /// stock Linux client does not request it.
    pub fn new(cca: CcaKind) -> Self {
        let ecn = match cca {
            CcaKind::Prague => EcnMode::AccEcn,
            CcaKind::Cubic => EcnMode::ClassicEcn,
        };
        FlowConfig {
            label: cca.name().to_string(),
            cca,
            client_ecn: ecn,
            server_ecn: ecn,
            start: SimTime::ZERO,
            stop: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub bottleneck_rate_bps: u64,
    pub delay: SimTime,
    /// `delay` is the base RTT rather than the one-way bottleneck delay.
    pub delay_is_rtt: bool,
    pub flows: Vec<FlowConfig>,
    pub aqm: DualPi2Config,
    /// Limit of the uncongested reverse-direction queue.
    pub reverse_limit_bytes: u64,
    pub tcp: TcpConfig,
    pub prague: PragueConfig,
    pub cubic: CubicConfig,
    pub seed: u64,
    pub runs: u32,
    pub duration: SimTime,
    /// Excluded from summary means, not from time series.
    pub warmup: SimTime,
    pub sample_interval: SimTime,
    /// Each flow's start is delayed by a uniform draw in `[0, start_jitter)`.
    pub start_jitter: SimTime,
    pub out_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "custom".into(),
            bottleneck_rate_bps: 100_000_000,
            delay: SimTime::from_millis(5),
            delay_is_rtt: true,
            flows: vec![
                FlowConfig::new(CcaKind::Prague),
                FlowConfig::new(CcaKind::Cubic),
            ],
            aqm: DualPi2Config::default(),
            reverse_limit_bytes: 10_000 * DEFAULT_MTU as u64,
            tcp: TcpConfig::default(),
            prague: PragueConfig::default(),
            cubic: CubicConfig::default(),
            seed: 1,
            runs: 30,
            duration: SimTime::from_secs(60),
            warmup: SimTime::from_secs(5),
            sample_interval: SimTime::from_millis(100),
            start_jitter: SimTime::from_millis(1),
            out_dir: None,
        }
    }
}

impl ScenarioConfig {
    /// 100 Mb/s, 5 ms.
    pub fn scenario1() -> Self {
        ScenarioConfig {
            name: "scenario1".into(),
            ..Default::default()
        }
    }

    /// 10 Mb/s, 30 ms.
    pub fn scenario2() -> Self {
        ScenarioConfig {
            name: "scenario2".into(),
            bottleneck_rate_bps: 10_000_000,
            delay: SimTime::from_millis(30),
            ..Default::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "scenario1" => Some(Self::scenario1()),
            "scenario2" => Some(Self::scenario2()),
            _ => None,
        }
    }

    pub fn set_scheduler(&mut self, kind: SchedulerKind) {
        self.aqm.scheduler = kind;
    }

    /// Cross-field checks that the parser cannot do line by line.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::invalid(m));
        if self.bottleneck_rate_bps == 0 {
            return bad("bottleneck rate must be positive");
        }
        if self.flows.is_empty() {
            return bad("at least one flow is required");
        }
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.duration == SimTime::ZERO {
            return bad("duration must be positive");
        }
        if self.warmup >= self.duration {
            return bad("warm-up must be shorter than the duration");
        }
        if self.sample_interval == SimTime::ZERO {
            return bad("sample interval must be positive");
        }
        if self.tcp.mss == 0 || self.tcp.mss + HEADER_OVERHEAD > DEFAULT_MTU {
            return bad("mss must be in 1..=1460");
        }
        if self.tcp.ack_ratio == 0 {
            return bad("ack_ratio must be at least 1");
        }
        if !(self.prague.g > 0.0 && self.prague.g <= 1.0) {
            return bad("prague g must be in (0, 1]");
        }
        if self.aqm.l_step_threshold < self.aqm.l_ramp_start {
            return bad("L marking ramp must end after it starts");
        }
        for f in &self.flows {
            if f.stop.is_some_and(|s| s <= f.start) {
                return Err(ConfigError::invalid(format!(
                    "flow {} stops before it starts",
                    f.label
                )));
            }
        }
        let mut labels: Vec<&str> = self.flows.iter().map(|f| f.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("flow labels must be unique");
        }
        Ok(())
    }

    /// Parses a config file. Values not mentioned keep the defaults of
    /// [`ScenarioConfig::default`]; listing any `[flow]` replaces the
    /// default flow set.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut flows: Vec<FlowConfig> = Vec::new();
        let mut section = Section::Root;
        let mut seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(line_no, "unterminated section header"))?
                    .trim();
                section = Section::from_name(name)
                    .ok_or_else(|| ConfigError::at(line_no, format!("unknown section [{name}]")))?;
                if section == Section::Flow {
                    flows.push(FlowConfig::new(CcaKind::Prague));
                    flows.last_mut().unwrap().label.clear();
                } else if seen.contains(&section) {
                    return Err(ConfigError::at(
                        line_no,
                        format!("duplicate section [{name}]"),
                    ));
                } else {
                    seen.push(section);
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    ConfigError::at(line_no, format!("expected key = value, got {line:?}"))
                })?;
            let v = Value {
                line: line_no,
                key,
                raw: value,
            };
            match section {
                Section::Root => match key {
                    "name" => cfg.name = value.to_string(),
                    _ => return Err(v.unknown("top level")),
                },
                Section::Topology => match key {
                    "rate_mbps" => cfg.bottleneck_rate_bps = (v.positive()? * 1e6).round() as u64,
                    "rate_bps" => cfg.bottleneck_rate_bps = v.int()?,
                    "delay_ms" => cfg.delay = v.millis()?,
                    "delay_is_rtt" => cfg.delay_is_rtt = v.boolean()?,
                    "reverse_limit_packets" => {
                        cfg.reverse_limit_bytes = v.int()? * DEFAULT_MTU as u64
                    }
                    _ => return Err(v.unknown("[topology]")),
                },
                Section::Flow => {
                    let f = flows.last_mut().expect("flow section pushes a flow");
                    match key {
                        "cca" => {
                            f.cca = match value {
                                "prague" => CcaKind::Prague,
                                "cubic" => CcaKind::Cubic,
                                _ => return Err(v.invalid("expected prague or cubic")),
                            };
                            // resets the ECN defaults, so `cca` should come first
                            let defaults = FlowConfig::new(f.cca);
                            f.client_ecn = defaults.client_ecn;
                            f.server_ecn = defaults.server_ecn;
                        }
                        "ecn" => {
                            let m = v.ecn_mode()?;
                            f.client_ecn = m;
                            f.server_ecn = m;
                        }
                        "client_ecn" => f.client_ecn = v.ecn_mode()?,
                        "server_ecn" => f.server_ecn = v.ecn_mode()?,
                        "label" => f.label = value.to_string(),
                        "start_s" => f.start = v.secs()?,
                        "stop_s" => f.stop = Some(v.secs()?),
                        _ => return Err(v.unknown("[flow]")),
                    }
                }
                Section::Aqm => match key {
                    "scheduler" => {
                        cfg.aqm.scheduler = match value {
                            "wrr" => SchedulerKind::wrr_default(),
                            "timeshift" => SchedulerKind::timeshift_default(),
                            _ => return Err(v.invalid("expected wrr or timeshift")),
                        }
                    }
                    "l_weight" => {
                        let w = v.int()?;
                        if w > 100 {
                            return Err(v.invalid("weight is a percentage"));
                        }
                        cfg.aqm.scheduler =
                            SchedulerKind::WeightedRoundRobin { l_weight: w as u32 };
                    }
                    "shift_ms" => {
                        cfg.aqm.scheduler = SchedulerKind::TimeShifted { shift: v.millis()? };
                    }
                    "target_ms" => cfg.aqm.target_delay = v.millis()?,
                    "tupdate_ms" => cfg.aqm.t_update = v.millis_positive()?,
                    "alpha" => cfg.aqm.pi_alpha = v.non_negative()?,
                    "beta" => cfg.aqm.pi_beta = v.non_negative()?,
                    "coupling" => cfg.aqm.coupling = v.non_negative()?,
                    "ramp_start_us" => {
                        cfg.aqm.l_ramp_start = SimTime::from_nanos((v.non_negative()? * 1e3) as u64)
                    }
                    "step_threshold_us" => {
                        cfg.aqm.l_step_threshold =
                            SimTime::from_nanos((v.non_negative()? * 1e3) as u64)
                    }
                    "limit_packets" => cfg.aqm.limit_bytes = v.int()? * DEFAULT_MTU as u64,
                    "min_queue_packets" => cfg.aqm.min_queue_bytes = v.int()? * DEFAULT_MTU as u64,
                    _ => return Err(v.unknown("[aqm]")),
                },
                Section::Tcp => match key {
                    "mss" => {
                        let mss = v.int()? as u32;
                        cfg.tcp.mss = mss;
                        cfg.prague.segment_size = mss;
                        cfg.cubic.segment_size = mss;
                    }
                    "ack_ratio" => cfg.tcp.ack_ratio = v.int()? as u32,
                    "delayed_ack_ms" => cfg.tcp.delayed_ack_timeout = v.millis()?,
                    "min_rto_ms" => cfg.tcp.min_rto = v.millis_positive()?,
                    "cep_init" => cfg.tcp.cep_init = v.int()?,
                    "initial_cwnd" => {
                        let w = v.positive()?;
                        cfg.prague.initial_cwnd_segments = w;
                        cfg.cubic.initial_cwnd_segments = w;
                    }
                    _ => return Err(v.unknown("[tcp]")),
                },
                Section::Prague => match key {
                    "g" => cfg.prague.g = v.positive()?,
                    "target_rtt_ms" => cfg.prague.target_rtt = v.millis_positive()?,
                    "initial_alpha" => cfg.prague.initial_alpha = v.unit_interval()?,
                    "ca_pacing_gain" => cfg.prague.ca_pacing_gain = v.positive()?,
                    "ss_pacing_gain" => cfg.prague.ss_pacing_gain = v.positive()?,
                    "loss_beta" => cfg.prague.loss_beta = v.unit_interval()?,
                    "rtt_scaling_exponent" => cfg.prague.rtt_scaling_exponent = v.non_negative()?,
                    "increase_in_cwr" => cfg.prague.increase_in_cwr = v.boolean()?,
                    _ => return Err(v.unknown("[prague]")),
                },
                Section::Cubic => match key {
                    "beta" => cfg.cubic.beta = v.unit_interval()?,
                    "c" => cfg.cubic.c = v.positive()?,
                    _ => return Err(v.unknown("[cubic]")),
                },
                Section::Run => match key {
                    "seed" => cfg.seed = v.int()?,
                    "runs" => cfg.runs = v.int()? as u32,
                    "duration_s" => cfg.duration = v.secs()?,
                    "warmup_s" => cfg.warmup = v.secs()?,
                    "sample_interval_ms" => cfg.sample_interval = v.millis_positive()?,
                    "start_jitter_ms" => cfg.start_jitter = v.millis()?,
                    "out" => cfg.out_dir = Some(PathBuf::from(value)),
                    _ => return Err(v.unknown("[run]")),
                },
            }
        }
        if !flows.is_empty() {
            for f in flows.iter_mut() {
                if f.label.is_empty() {
                    f.label = f.cca.name().to_string();
                }
            }
            cfg.flows = flows;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the format accepted by [`ScenarioConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!("name = {}\n\n[topology]\n", self.name);
        s += &format!("rate_bps = {}\n", self.bottleneck_rate_bps);
        s += &format!("delay_ms = {}\n", self.delay.as_millis_f64());
        s += &format!("delay_is_rtt = {}\n", self.delay_is_rtt);
        s += &format!(
            "reverse_limit_packets = {}\n",
            self.reverse_limit_bytes / DEFAULT_MTU as u64
        );
        for f in &self.flows {
            s += &format!("\n[flow]\ncca = {}\nlabel = {}\n", f.cca.name(), f.label);
            s += &format!("client_ecn = {}\n", ecn_name(f.client_ecn));
            s += &format!("server_ecn = {}\n", ecn_name(f.server_ecn));
            s += &format!("start_s = {}\n", f.start.as_secs_f64());
            if let Some(stop) = f.stop {
                s += &format!("stop_s = {}\n", stop.as_secs_f64());
            }
        }
        let a = &self.aqm;
        s += "\n[aqm]\n";
        match a.scheduler {
            SchedulerKind::WeightedRoundRobin { l_weight } => {
                s += &format!("scheduler = wrr\nl_weight = {l_weight}\n")
            }
            SchedulerKind::TimeShifted { shift } => {
                s += &format!(
                    "scheduler = timeshift\nshift_ms = {}\n",
                    shift.as_millis_f64()
                )
            }
        }
        s += &format!("target_ms = {}\n", a.target_delay.as_millis_f64());
        s += &format!("tupdate_ms = {}\n", a.t_update.as_millis_f64());
        s += &format!(
            "alpha = {}\nbeta = {}\ncoupling = {}\n",
            a.pi_alpha, a.pi_beta, a.coupling
        );
        s += &format!(
            "ramp_start_us = {}\n",
            a.l_ramp_start.as_nanos() as f64 / 1e3
        );
        s += &format!(
            "step_threshold_us = {}\n",
            a.l_step_threshold.as_nanos() as f64 / 1e3
        );
        s += &format!("limit_packets = {}\n", a.limit_bytes / DEFAULT_MTU as u64);
        s += &format!(
            "min_queue_packets = {}\n",
            a.min_queue_bytes / DEFAULT_MTU as u64
        );
        let t = &self.tcp;
        s += &format!(
            "\n[tcp]\nmss = {}\nack_ratio = {}\ndelayed_ack_ms = {}\nmin_rto_ms = {}\ncep_init = {}\ninitial_cwnd = {}\n",
            t.mss,
            t.ack_ratio,
            t.delayed_ack_timeout.as_millis_f64(),
            t.min_rto.as_millis_f64(),
            t.cep_init,
            self.prague.initial_cwnd_segments
        );
        let p = &self.prague;
        s += &format!(
            "\n[prague]\ng = {}\ntarget_rtt_ms = {}\ninitial_alpha = {}\nca_pacing_gain = {}\nss_pacing_gain = {}\nloss_beta = {}\nrtt_scaling_exponent = {}\nincrease_in_cwr = {}\n",
            p.g,
            p.target_rtt.as_millis_f64(),
            p.initial_alpha,
            p.ca_pacing_gain,
            p.ss_pacing_gain,
            p.loss_beta,
            p.rtt_scaling_exponent,
            p.increase_in_cwr
        );
        s += &format!(
            "\n[cubic]\nbeta = {}\nc = {}\n",
            self.cubic.beta, self.cubic.c
        );
        s += &format!(
            "\n[run]\nseed = {}\nruns = {}\nduration_s = {}\nwarmup_s = {}\nsample_interval_ms = {}\nstart_jitter_ms = {}\n",
            self.seed,
            self.runs,
            self.duration.as_secs_f64(),
            self.warmup.as_secs_f64(),
            self.sample_interval.as_millis_f64(),
            self.start_jitter.as_millis_f64()
        );
        if let Some(out) = &self.out_dir {
            s += &format!("out = {}\n", out.display());
        }
        s
    }
}

fn ecn_name(m: EcnMode) -> &'static str {
    match m {
        EcnMode::AccEcn => "accecn",
        EcnMode::ClassicEcn => "classic",
        EcnMode::Off => "off",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    Root,
    Topology,
    Flow,
    Aqm,
    Tcp,
    Prague,
    Cubic,
    Run,
}

impl Section {
    fn from_name(name: &str) -> Option<Section> {
        Some(match name {
            "topology" => Section::Topology,
            "flow" => Section::Flow,
            "aqm" => Section::Aqm,
            "tcp" => Section::Tcp,
            "prague" => Section::Prague,
            "cubic" => Section::Cubic,
            "run" => Section::Run,
            _ => return None,
        })
    }
}

struct Value<'a> {
    line: usize,
    key: &'a str,
    raw: &'a str,
}

impl Value<'_> {
    fn invalid(&self, why: &str) -> ConfigError {
        ConfigError::at(self.line, format!("{} = {:?}: {why}", self.key, self.raw))
    }

    fn unknown(&self, place: &str) -> ConfigError {
        ConfigError::at(self.line, format!("unknown key {:?} in {place}", self.key))
    }

    fn float(&self) -> Result<f64, ConfigError> {
        match self.raw.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(self.invalid("expected a number")),
        }
    }

    fn non_negative(&self) -> Result<f64, ConfigError> {
        let x = self.float()?;
        if x < 0.0 {
            return Err(self.invalid("must not be negative"));
        }
        Ok(x)
    }

    fn positive(&self) -> Result<f64, ConfigError> {
        let x = self.float()?;
        if x <= 0.0 {
            return Err(self.invalid("must be positive"));
        }
        Ok(x)
    }

    fn unit_interval(&self) -> Result<f64, ConfigError> {
        let x = self.float()?;
        if !(0.0..=1.0).contains(&x) {
            return Err(self.invalid("must be within [0, 1]"));
        }
        Ok(x)
    }

    fn int(&self) -> Result<u64, ConfigError> {
        self.raw
            .parse()
            .map_err(|_| self.invalid("expected a non-negative integer"))
    }

    fn boolean(&self) -> Result<bool, ConfigError> {
        match self.raw {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(self.invalid("expected true or false")),
        }
    }

    fn millis(&self) -> Result<SimTime, ConfigError> {
        Ok(SimTime::from_millis_f64(self.non_negative()?))
    }

    fn millis_positive(&self) -> Result<SimTime, ConfigError> {
        Ok(SimTime::from_millis_f64(self.positive()?))
    }

    fn secs(&self) -> Result<SimTime, ConfigError> {
        Ok(SimTime::from_secs_f64(self.non_negative()?))
    }

    fn ecn_mode(&self) -> Result<EcnMode, ConfigError> {
        match self.raw {
            "accecn" => Ok(EcnMode::AccEcn),
            "classic" => Ok(EcnMode::ClassicEcn),
            "off" => Ok(EcnMode::Off),
            _ => Err(self.invalid("expected accecn, classic or off")),
        }
    }
}
