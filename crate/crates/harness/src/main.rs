use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cantiming::{diff_traces, window_check, worst_case_delay, BusState, Time};
use cantiming_harness::compare::{comparison_text, write_comparison};
use cantiming_harness::output::{format_ms, read_events, report_text, write_run};
use cantiming_harness::{bench_scaling, compare_strategies, load_scenario, run_closed_loop, HarnessError, Strategy};
use clap::{Parser, Subcommand, ValueEnum};

/// Co-simulation of control loops closed over a CAN bus.
#[derive(Parser)]
#[command(name = "cantiming", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    /// Constant worst-case delay.
    Wc,
    /// Delays predicted from the observed bus state.
    Tm,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop run under one strategy.
    Run {
        scenario: PathBuf,
        /// Defaults to the scenario's `strategy`, else tm.
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Directory for the CSV traces and report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Both strategies side by side.
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schedulability verdict over the scenario horizon.
    Check { scenario: PathBuf },
    /// Hybrid engine against the tick-level oracle.
    Bench {
        scenario: PathBuf,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Override the scenario horizon.
        #[arg(long)]
        horizon_ms: Option<u64>,
    },
    /// Compare two events files.
    Diff { trace_a: PathBuf, trace_b: PathBuf },
}

const CONFIG_ERROR: u8 = 1;
const UNSCHEDULABLE: u8 = 2;
const MISMATCH: u8 = 3;

fn name_of(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn run(cli: Cli) -> Result<u8, HarnessError> {
    match cli.command {
        Command::Run {
            scenario,
            strategy,
            out,
        } => {
            let sc = load_scenario(&scenario)?;
            let strategy = match strategy {
                Some(StrategyArg::Wc) => Strategy::WorstCase,
                Some(StrategyArg::Tm) => Strategy::TimingModel,
                None => sc.strategy.unwrap_or(Strategy::TimingModel),
            };
            let report = run_closed_loop(&sc, strategy)?;
            let name = name_of(&scenario);
            print!("{}", report_text(&name, &report));
            if let Some(dir) = out {
                write_run(&dir, &name, &report)?;
            }
            Ok(0)
        }
        Command::Compare { scenario, out } => {
            let sc = load_scenario(&scenario)?;
            if sc.strategy.is_some() {
                eprintln!("note: `strategy` in the scenario is ignored by compare");
            }
            let cmp = compare_strategies(&sc)?;
            print!("{}", comparison_text(&cmp));
            if let Some(dir) = out {
                write_comparison(&dir, &name_of(&scenario), &cmp)?;
            }
            Ok(0)
        }
        Command::Check { scenario } => {
            let sc = load_scenario(&scenario)?;
            let start = BusState::initial(&sc.specs, Time::ZERO)?;
            let v = window_check(&sc.specs, &start, sc.horizon)?;
            let q = sc.quantum;
            println!("schedulable {}", if v.schedulable { "yes" } else { "no" });
            if v.margin != cantiming::SchedVerdict::UNBOUNDED {
                let m = v.margin;
                let s = format_ms(q, Time(m.unsigned_abs()));
                println!("margin_ms {}{s}", if m < 0 { "-" } else { "" });
            }
            if let Some((chain, at)) = v.first_violation {
                println!("first_violation chain {chain} at {} ms", format_ms(q, at));
            }
            for spec in &sc.specs {
                match worst_case_delay(&sc.specs, spec.id, sc.probe) {
                    Ok(d) => println!("chain {} worst_case_delay_ms {}", spec.id, format_ms(q, d)),
                    Err(e) => println!("chain {} worst_case_delay_ms n/a ({e})", spec.id),
                }
            }
            Ok(if v.schedulable { 0 } else { UNSCHEDULABLE })
        }
        Command::Bench {
            scenario,
            reps,
            horizon_ms,
        } => {
            let sc = load_scenario(&scenario)?;
            let horizon = match horizon_ms {
                Some(ms) => sc.millisecond().0.checked_mul(ms).map(Time).ok_or_else(|| {
                    HarnessError::Config(cantiming::ConfigError::invalid("--horizon-ms", "too large"))
                })?,
                None => sc.horizon,
            };
            let s = bench_scaling(&sc.specs, horizon, reps)?;
            for b in [&s.base, &s.doubled] {
                println!(
                    "horizon_ms {} events {} hybrid_ms {:.4} oracle_ms {:.4} speedup {}",
                    format_ms(sc.quantum, b.horizon),
                    b.events,
                    b.hybrid.as_secs_f64() * 1e3,
                    b.oracle.as_secs_f64() * 1e3,
                    b.speedup().map_or("n/a".into(), |x| format!("{x:.1}"))
                );
            }
            match s.ratios() {
                Some((h, o)) => println!("doubling hybrid x{h:.3} oracle x{o:.3}"),
                None => println!("doubling n/a"),
            }
            Ok(0)
        }
        Command::Diff { trace_a, trace_b } => {
            let a = read_events(&trace_a)?;
            let b = read_events(&trace_b)?;
            let d = diff_traces(&a, &b);
            if d.is_empty() {
                println!("identical ({} events)", a.len());
                return Ok(0);
            }
            println!("{} discrepancies (times in ns)", d.len());
            for x in &d {
                println!("{x}");
            }
            Ok(MISMATCH)
        }
    }
}

fn main() -> ExitCode {
    // Usage errors exit 1 like any other bad input; clap's own code 2 is taken.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CONFIG_ERROR } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CONFIG_ERROR)
        }
    }
}
