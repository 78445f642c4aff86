mod gantt;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use envelope_core::feasibility::{
    check_normal, check_ooe_feasible, Bounds, NormalVerdict, OoeVerdict,
};
use envelope_core::scenario::{parse_scenario, random_scenario, RandomLimits, ScenarioDoc};
use envelope_core::{run_scenario, AlarmKind, RecordKind, Scenario, Trace};

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_MISS: u8 = 2;
const EXIT_FAULT: u8 = 3;
const EXIT_VIOLATION: u8 = 4;
const EXIT_REFUSED: u8 = 5;

#[derive(Parser)]
#[command(
    name = "envelope",
    version,
    about = "Out-of-envelope interrupt and scheduling simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trace and metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        /// Echo IPL_SET and TIMER_SET records to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Check normal schedulability and bounded out-of-envelope feasibility.
    Check {
        #[arg(long)]
        scenario: PathBuf,
        /// Where to write the witness trace (default: next to the scenario).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Length of the enumerated release patterns (default: hyperperiod).
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Render a trace as gantt rows or an SVG chart.
    Gantt {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Write a random valid scenario.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        max_tasks: usize,
        #[arg(long, default_value_t = 200)]
        max_horizon: u64,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Svg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            trace,
            metrics,
            verbose,
        } => cmd_run(&scenario, &trace, &metrics, verbose),
        Command::Check {
            scenario,
            trace,
            horizon,
        } => cmd_check(&scenario, trace, horizon),
        Command::Gantt { trace, out, format } => cmd_gantt(&trace, &out, format),
        Command::Generate {
            seed,
            max_tasks,
            max_horizon,
            out,
        } => cmd_generate(seed, max_tasks, max_horizon, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn load(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("{}", path.display()))
}

fn write_trace(trace: &Trace, path: &Path) -> Result<()> {
    fs::write(path, trace.to_csv_string()).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(scenario: &Path, trace_out: &Path, metrics_out: &Path, verbose: bool) -> Result<u8> {
    let sc = load(scenario)?;
    let (trace, metrics) = run_scenario(&sc)?;
    write_trace(&trace, trace_out)?;
    fs::write(metrics_out, metrics.to_json() + "\n")
        .with_context(|| format!("writing {}", metrics_out.display()))?;
    if verbose {
        for r in trace.records() {
            if matches!(r.kind, RecordKind::IplSet | RecordKind::TimerSet) {
                let line = r.line.map(|l| l.to_string()).unwrap_or_default();
                eprintln!("{} {} {} {}", r.time, r.kind, line, r.detail);
            }
        }
    }
    println!(
        "horizon {}: {} misses, {} drops, {} alarms",
        metrics.horizon,
        metrics.misses(),
        metrics.drops(),
        metrics.alarms.len()
    );
    Ok(if metrics.misses() > 0 {
        EXIT_MISS
    } else if metrics.alarms_of(AlarmKind::SensorFault) > 0 {
        EXIT_FAULT
    } else {
        EXIT_OK
    })
}

fn cmd_check(scenario: &Path, trace_out: Option<PathBuf>, horizon: Option<u64>) -> Result<u8> {
    let sc = load(scenario)?;
    let ts = &sc.task_set;
    match check_normal(ts, sc.policy)? {
        NormalVerdict::Schedulable => println!("normal: schedulable"),
        NormalVerdict::Miss(w) => println!("normal: miss {} job {} at t={}", w.task, w.job, w.time),
    }
    let witness_path = trace_out.unwrap_or_else(|| scenario.with_extension("witness.csv"));
    match check_ooe_feasible(ts, sc.policy, Bounds::default(), horizon) {
        Ok(OoeVerdict::Feasible { patterns, stress }) => {
            println!("out-of-envelope: feasible over {patterns} release patterns");
            let (pattern, trace) = *stress;
            println!("densest pattern: {}", pattern.describe(ts));
            write_trace(&trace, &witness_path)?;
            Ok(EXIT_OK)
        }
        Ok(OoeVerdict::Violation {
            patterns,
            index,
            pattern,
            witness,
        }) => {
            println!("out-of-envelope: violation in pattern {index} of {patterns}");
            println!("pattern: {}", pattern.describe(ts));
            println!(
                "miss: {} job {} at t={}",
                witness.task, witness.job, witness.time
            );
            write_trace(&witness.trace, &witness_path)?;
            println!("witness: {}", witness_path.display());
            Ok(EXIT_VIOLATION)
        }
        Err(e) if e.is_refusal() => {
            eprintln!("refused: {e}");
            Ok(EXIT_REFUSED)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_gantt(trace_path: &Path, out: &Path, format: Format) -> Result<u8> {
    let file =
        fs::File::open(trace_path).with_context(|| format!("opening {}", trace_path.display()))?;
    let trace =
        Trace::read_csv(file).with_context(|| format!("parsing {}", trace_path.display()))?;
    let rows = gantt::rows(&trace);
    let text = match format {
        Format::Csv => gantt::to_csv(&rows)?,
        Format::Svg => gantt::to_svg(&rows),
    };
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    Ok(EXIT_OK)
}

fn cmd_generate(seed: u64, max_tasks: usize, max_horizon: u64, out: Option<PathBuf>) -> Result<u8> {
    anyhow::ensure!(max_tasks >= 1, "--max-tasks must be at least 1");
    anyhow::ensure!(max_horizon >= 1, "--max-horizon must be at least 1");
    let sc = random_scenario(
        seed,
        RandomLimits {
            max_tasks,
            max_horizon,
        },
    );
    let json = ScenarioDoc::from_scenario(&sc).to_json() + "\n";
    match out {
        Some(path) => {
            fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{json}"),
    }
    Ok(EXIT_OK)
}
