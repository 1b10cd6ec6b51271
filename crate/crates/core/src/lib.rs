//! Discrete-event simulator for the L4S stack: AccECN feedback, TCP Prague,
//! CUBIC and the DualPI2 coupled AQM on a dumbbell bottleneck.

pub mod accecn;
pub mod cc;
pub mod config;
pub mod cubic;
pub mod dualpi2;
pub mod error;
pub mod metrics;
pub mod net;
pub mod prague;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod tcp;

pub use accecn::{AceCounters, EcnMode};
pub use cc::{CaState, CcaFeedback, CongestionControl};
pub use config::{CcaKind, FlowConfig, ScenarioConfig};
pub use cubic::{Cubic, CubicConfig};
pub use dualpi2::{DualPi2, DualPi2Config, QueueId, SchedulerKind};
pub use error::{ConfigError, MetricsError, RunError, WireError};
pub use metrics::{aggregate_runs, jain_index, Aggregate, RunSummary, TimeSeries};
pub use net::{IpEcn, Packet, TcpFlags, TcpHeader};
pub use prague::{Prague, PragueConfig};
pub use runner::{run_replications, ScenarioResult};
pub use scenario::{run_once, RunOutput, World};
pub use sim::{RngStream, Scheduler, SimTime};
