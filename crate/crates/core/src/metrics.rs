//! Time series, per-run summaries and cross-run statistics.

use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::MetricsError;
use crate::sim::SimTime;

/// Samples on a fixed grid. Time is the start of each bin, in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub name: String,
    pub interval: SimTime,
    pub points: Vec<(f64, f64)>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, interval: SimTime) -> Self {
        TimeSeries {
            name: name.into(),
            interval,
            points: Vec::new(),
        }
    }

    /// Appends a point; timestamps must increase.
    pub fn push(&mut self, time_s: f64, value: f64) {
        if let Some(&(last, _)) = self.points.last() {
            assert!(time_s > last, "time series {} is not increasing", self.name);
        }
        self.points.push((time_s, value));
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean of the values at or after `from_s`.
    pub fn mean_from(&self, from_s: f64) -> Option<f64> {
        mean(self.points.iter().filter(|p| p.0 >= from_s).map(|p| p.1))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s,value\n");
        for (t, v) in &self.points {
            let _ = writeln!(s, "{t:.3},{v}");
        }
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// How a bin's samples turn into one value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinMode {
    /// Average of the samples; bins without samples are left out.
    Mean,
    /// Sum divided by the bin width, in units per second; empty bins are 0.
    Rate,
}

/// Accumulates raw samples into fixed-width bins.
#[derive(Clone, Debug)]
pub struct Binner {
    interval: SimTime,
    mode: BinMode,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl Binner {
    pub fn new(interval: SimTime, mode: BinMode) -> Self {
        assert!(interval > SimTime::ZERO, "bin interval must be positive");
        Binner {
            interval,
            mode,
            sums: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn add(&mut self, t: SimTime, value: f64) {
        let bin = (t.as_nanos() / self.interval.as_nanos()) as usize;
        if bin >= self.sums.len() {
            self.sums.resize(bin + 1, 0.0);
            self.counts.resize(bin + 1, 0);
        }
        self.sums[bin] += value;
        self.counts[bin] += 1;
    }

    /// Series covering `[0, end)`.
    pub fn finish(&self, name: impl Into<String>, end: SimTime) -> TimeSeries {
        let mut ts = TimeSeries::new(name, self.interval);
        let width = self.interval.as_secs_f64();
        let bins = end.as_nanos().div_ceil(self.interval.as_nanos()) as usize;
        for i in 0..bins {
            let (sum, count) = match self.sums.get(i) {
                Some(&s) => (s, self.counts[i]),
                None => (0.0, 0),
            };
            let t = i as f64 * width;
            match self.mode {
                BinMode::Mean if count > 0 => ts.push(t, sum / count as f64),
                BinMode::Mean => {}
                BinMode::Rate => ts.push(t, sum / width),
            }
        }
        ts
    }
}

/// Application throughput in bits per second from `(time, bytes)` delivery
/// records.
pub fn throughput_series(
    name: impl Into<String>,
    deliveries: impl IntoIterator<Item = (SimTime, u64)>,
    interval: SimTime,
    end: SimTime,
) -> TimeSeries {
    let mut b = Binner::new(interval, BinMode::Rate);
    for (t, bytes) in deliveries {
        b.add(t, bytes as f64 * 8.0);
    }
    b.finish(name, end)
}

/// `(sum x)^2 / (n * sum x^2)`.
pub fn jain_index(throughputs: &[f64]) -> Result<f64, MetricsError> {
    let sum: f64 = throughputs.iter().sum();
    let sq: f64 = throughputs.iter().map(|x| x * x).sum();
    if throughputs.is_empty() || sq <= 0.0 || throughputs.iter().any(|x| *x < 0.0 || !x.is_finite())
    {
        return Err(MetricsError::UndefinedFairness);
    }
    Ok(sum * sum / (throughputs.len() as f64 * sq))
}

/// Sample mean and the half-width of the two-sided 95% Student-t interval.
pub fn mean_ci95(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricsError::TooFewRuns(n));
    }
    let m = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    Ok((m, t * var.sqrt() / (n as f64).sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSummary {
    pub label: String,
    /// Mean application throughput after warm-up, bits per second.
    pub throughput_bps: f64,
    /// Mean sender smoothed RTT after warm-up, seconds.
    pub mean_rtt_s: f64,
    pub ce_marks: u64,
    pub ce_marks_per_s: f64,
    pub retransmits: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub run_number: u32,
    pub flows: Vec<FlowSummary>,
    /// Mean per-packet sojourn after warm-up, seconds.
    pub l4s_sojourn_s: f64,
    pub classic_sojourn_s: f64,
    pub jain_index: f64,
}

impl RunSummary {
    /// Named scalar metrics in a fixed order.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut m = Vec::new();
        for f in &self.flows {
            m.push((
                format!("{}_throughput_mbps", f.label),
                f.throughput_bps / 1e6,
            ));
            m.push((format!("{}_rtt_ms", f.label), f.mean_rtt_s * 1e3));
            m.push((format!("{}_ce_marks", f.label), f.ce_marks as f64));
            m.push((format!("{}_ce_per_s", f.label), f.ce_marks_per_s));
            m.push((format!("{}_retransmits", f.label), f.retransmits as f64));
        }
        m.push(("l4s_sojourn_ms".into(), self.l4s_sojourn_s * 1e3));
        m.push(("classic_sojourn_ms".into(), self.classic_sojourn_s * 1e3));
        m.push(("jain_index".into(), self.jain_index));
        m
    }

    pub fn flow(&self, label: &str) -> Option<&FlowSummary> {
        self.flows.iter().find(|f| f.label == label)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricAggregate {
    pub name: String,
    pub mean: f64,
    /// `None` with fewer than two runs.
    pub ci95: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub runs: usize,
    pub metrics: Vec<MetricAggregate>,
}

impl Aggregate {
    pub fn get(&self, name: &str) -> Option<&MetricAggregate> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Mean and 95% CI of every summary metric across runs. Summaries must
/// share one flow layout.
pub fn aggregate_runs(summaries: &[RunSummary]) -> Result<Aggregate, MetricsError> {
    let first = summaries.first().ok_or(MetricsError::TooFewRuns(0))?;
    let names: Vec<String> = first.metrics().into_iter().map(|(n, _)| n).collect();
    let table: Vec<Vec<f64>> = summaries
        .iter()
        .map(|s| s.metrics().into_iter().map(|(_, v)| v).collect())
        .collect();
    let metrics = names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let values: Vec<f64> = table.iter().map(|row| row[i]).collect();
            let (mean, ci95) = match mean_ci95(&values) {
                Ok((m, h)) => (m, Some(h)),
                Err(_) => (values[0], None),
            };
            MetricAggregate { name, mean, ci95 }
        })
        .collect();
    Ok(Aggregate {
        runs: summaries.len(),
        metrics,
    })
}

/// `summary.csv`: one row per run, then `mean` and `ci95` rows.
pub fn summary_csv(summaries: &[RunSummary], agg: &Aggregate) -> String {
    let mut s = String::from("run");
    for m in &agg.metrics {
        s.push(',');
        s.push_str(&m.name);
    }
    s.push('\n');
    for r in summaries {
        let _ = write!(s, "{}", r.run_number);
        for (_, v) in r.metrics() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s.push_str("mean");
    for m in &agg.metrics {
        let _ = write!(s, ",{}", m.mean);
    }
    s.push_str("\nci95");
    for m in &agg.metrics {
        match m.ci95 {
            Some(h) => {
                let _ = write!(s, ",{h}");
            }
            None => s.push(','),
        }
    }
    s.push('\n');
    s
}
