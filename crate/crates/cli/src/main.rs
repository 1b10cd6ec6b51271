use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, ValueEnum};
use l4sim::dualpi2::SchedulerKind;
use l4sim::runner::{format_aggregate, prepare_output_dir, run_replications, write_artifacts};
use l4sim::{ConfigError, RunError, ScenarioConfig, SimTime};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Scheduler {
    Wrr,
    Timeshift,
}

/// Run L4S dumbbell scenarios (TCP Prague vs CUBIC over DualPI2).
#[derive(Debug, Parser)]
#[command(name = "l4sim", version)]
struct Args {
    /// Preset name (scenario1, scenario2) or path to a scenario file.
    #[arg(long)]
    scenario: String,
    /// Number of replications.
    #[arg(long)]
    runs: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds per replication.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory [default: results/<scenario name>].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    scheduler: Option<Scheduler>,
    /// Run this many replications at once.
    #[arg(long, value_name = "K")]
    parallel: Option<usize>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Also write gnuplot scripts next to the CSV files.
    #[arg(long)]
    emit_plots: bool,
}

fn load(args: &Args) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = match ScenarioConfig::preset(&args.scenario) {
        Some(cfg) => cfg,
        None => {
            let text = std::fs::read_to_string(&args.scenario).map_err(|e| {
                ConfigError::invalid(format!(
                    "{} is neither a preset nor a readable file: {e}",
                    args.scenario
                ))
            })?;
            ScenarioConfig::parse(&text).map_err(|e| ConfigError {
                message: format!("{}: {}", args.scenario, e.message),
                ..e
            })?
        }
    };
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(d) = args.duration {
        if !(d.is_finite() && d > 0.0) {
            return Err(ConfigError::invalid(
                "--duration must be a positive number of seconds",
            ));
        }
        cfg.duration = SimTime::from_secs_f64(d);
        if cfg.warmup >= cfg.duration {
            cfg.warmup = SimTime::ZERO;
        }
    }
    match args.scheduler {
        Some(Scheduler::Wrr) => cfg.set_scheduler(SchedulerKind::wrr_default()),
        Some(Scheduler::Timeshift) => cfg.set_scheduler(SchedulerKind::timeshift_default()),
        None => {}
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if args.parallel == Some(0) {
        return Err(ConfigError::invalid("--parallel must be at least 1"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args, cfg: &ScenarioConfig) -> Result<(), RunError> {
    let out = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
    prepare_output_dir(&out, args.force)?;
    let result = run_replications(cfg, args.parallel)?;
    let files = write_artifacts(&out, cfg, &result, args.emit_plots)?;
    print!("{}", format_aggregate(cfg, &result.aggregate));
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    if std::env::args_os().len() <= 1 {
        let _ = Args::command().print_help();
        return ExitCode::from(EXIT_CONFIG);
    }
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(&args, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                RunError::Config(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            };
            ExitCode::from(code)
        }
    }
}
