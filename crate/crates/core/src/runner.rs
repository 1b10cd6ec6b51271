//! Replications and their on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::error::RunError;
use crate::metrics::{aggregate_runs, summary_csv, Aggregate};
use crate::scenario::{run_once, RunOutput};

/// Results of all replications, in run order.
#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub runs: Vec<RunOutput>,
    pub aggregate: Aggregate,
}

/// Runs replications `1..=cfg.runs`. With `parallel = Some(k)` they are
/// spread over `k` threads; results do not depend on `k`.
pub fn run_replications(
    cfg: &ScenarioConfig,
    parallel: Option<usize>,
) -> Result<ScenarioResult, RunError> {
    cfg.validate()?;
    let numbers: Vec<u32> = (1..=cfg.runs).collect();
    let runs: Vec<RunOutput> = match parallel {
        Some(k) if k > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .expect("thread pool");
            pool.install(|| {
                numbers
                    .par_iter()
                    .map(|&n| run_once(cfg, n))
                    .collect::<Result<_, _>>()
            })?
        }
        _ => numbers
            .iter()
            .map(|&n| {
                log::info!("{}: run {n}/{}", cfg.name, cfg.runs);
                run_once(cfg, n)
            })
            .collect::<Result<_, _>>()?,
    };
    let summaries: Vec<_> = runs.iter().map(|r| r.summary.clone()).collect();
    let aggregate = aggregate_runs(&summaries)?;
    Ok(ScenarioResult { runs, aggregate })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<(), RunError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(io_err(dir))?.next().is_some();
        if non_empty && !force {
            return Err(RunError::OutputExists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write(path: PathBuf, contents: &str) -> Result<(), RunError> {
    fs::write(&path, contents).map_err(io_err(&path))
}

/// Writes `run<N>_<series>.csv` for every run, `summary.csv` and the
/// effective config. With `plots`, adds one gnuplot script per series kind.
pub fn write_artifacts(
    dir: &Path,
    cfg: &ScenarioConfig,
    result: &ScenarioResult,
    plots: bool,
) -> Result<Vec<PathBuf>, RunError> {
    let mut written = Vec::new();
    let width = result.runs.len().to_string().len().max(2);
    for run in &result.runs {
        let n = run.summary.run_number;
        for s in &run.series {
            let path = dir.join(format!("run{n:0width$}_{}.csv", s.name));
            write(path.clone(), &s.to_csv())?;
            written.push(path);
        }
    }
    let summaries: Vec<_> = result.runs.iter().map(|r| r.summary.clone()).collect();
    let path = dir.join("summary.csv");
    write(path.clone(), &summary_csv(&summaries, &result.aggregate))?;
    written.push(path);
    let path = dir.join("scenario.conf");
    write(path.clone(), &cfg.to_text())?;
    written.push(path);
    if plots {
        if let Some(first) = result.runs.first() {
            for s in &first.series {
                let path = dir.join(format!("{}.gp", s.name));
                write(
                    path.clone(),
                    &gnuplot_script(&s.name, result.runs.len(), width),
                )?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

fn gnuplot_script(series: &str, runs: usize, width: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set xlabel 'time (s)'");
    let _ = writeln!(s, "set ylabel '{series}'");
    let _ = writeln!(s, "set terminal pngcairo size 1000,500");
    let _ = writeln!(s, "set output '{series}.png'");
    let files: Vec<String> = (1..=runs)
        .map(|n| format!("'run{n:0width$}_{series}.csv' using 1:2 with lines title 'run {n}'"))
        .collect();
    let _ = writeln!(s, "plot {}", files.join(", \\\n     "));
    s
}

/// Human-readable table of the aggregate.
pub fn format_aggregate(cfg: &ScenarioConfig, agg: &Aggregate) -> String {
    let mut s = format!("{} ({} runs)\n", cfg.name, agg.runs);
    for m in &agg.metrics {
        match m.ci95 {
            Some(h) => {
                let _ = writeln!(s, "  {:<28} {:>12.4} ± {:.4}", m.name, m.mean, h);
            }
            None => {
                let _ = writeln!(s, "  {:<28} {:>12.4}", m.name, m.mean);
            }
        }
    }
    s
}
