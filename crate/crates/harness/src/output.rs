//! CSV traces and the text report.
//!
//! Every time column is in milliseconds, written as an exact decimal of the
//! underlying nanosecond count. Files:
//!
//! - `events.csv`: `time,kind,chain,k`
//! - `loop<N>_signals.csv`: `time,y,lambda,u` every millisecond (one column
//!   per component, suffixed `1`, `2`, ... for vector signals)
//! - `loop<N>_instances.csv`:
//!   `k,alpha,beta,gamma,delta,predicted_delta,alpha_hat,epsilon,missed`
//! - `report.txt`: run summary

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cantiming::{ChainId, EventKind, EventTrace, Quantum, Time, TimedEvent};
use nalgebra::DVector;

use crate::closed_loop::{LoopReport, RunReport};
use crate::HarnessError;

/// `t` in milliseconds, exact, without trailing zeros.
pub fn format_ms(quantum: Quantum, t: Time) -> String {
    let ns = t.0 as u128 * quantum.nanos() as u128;
    let (whole, frac) = (ns / 1_000_000, ns % 1_000_000);
    if frac == 0 {
        whole.to_string()
    } else {
        let f = format!("{frac:06}");
        format!("{whole}.{}", f.trim_end_matches('0'))
    }
}

fn format_signed_ms(quantum: Quantum, ticks: i64) -> String {
    let s = format_ms(quantum, Time(ticks.unsigned_abs()));
    if ticks < 0 {
        format!("-{s}")
    } else {
        s
    }
}

/// Inverse of [`format_ms`], in nanoseconds.
pub fn parse_ms(s: &str) -> Option<u64> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    if whole.is_empty()
        || frac.len() > 6
        || !whole.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let w: u64 = whole.parse().ok()?;
    let f: u64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<6}").parse().ok()?
    };
    w.checked_mul(1_000_000)?.checked_add(f)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, HarnessError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn opt_ms(q: Quantum, t: Option<Time>) -> String {
    t.map(|t| format_ms(q, t)).unwrap_or_default()
}

pub fn write_events(path: &Path, quantum: Quantum, trace: &EventTrace) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    w.write_record(["time", "kind", "chain", "k"])?;
    for e in trace.iter() {
        w.write_record([
            format_ms(quantum, e.at),
            e.kind.as_str().to_string(),
            e.chain.to_string(),
            e.instance.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads an events file back; times come out in nanoseconds.
pub fn read_events(path: &Path) -> Result<EventTrace, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let bad = |line: usize, what: &str| HarnessError::Trace(format!("{}:{line}: {what}", path.display()));
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["time", "kind", "chain", "k"] {
        return Err(bad(1, "expected header time,kind,chain,k"));
    }
    let mut events = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 4 {
            return Err(bad(line, "expected 4 fields"));
        }
        let at = parse_ms(&rec[0]).ok_or_else(|| bad(line, "bad time"))?;
        let kind: EventKind = rec[1].parse().map_err(|e: String| bad(line, &e))?;
        let chain: u32 = rec[2].parse().map_err(|_| bad(line, "bad chain"))?;
        let k: u64 = rec[3].parse().map_err(|_| bad(line, "bad instance"))?;
        events.push(TimedEvent {
            at: Time(at),
            kind,
            chain: ChainId(chain),
            instance: k,
        });
    }
    Ok(EventTrace::new(events))
}

fn columns(name: &str, len: usize) -> Vec<String> {
    if len == 1 {
        vec![name.to_string()]
    } else {
        (1..=len).map(|i| format!("{name}{i}")).collect()
    }
}

fn push_values(row: &mut Vec<String>, v: &DVector<f64>) {
    row.extend(v.iter().map(|x| x.to_string()));
}

pub fn write_signals(path: &Path, quantum: Quantum, lp: &LoopReport) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    let Some(first) = lp.signals.first() else {
        w.write_record(["time", "y", "lambda", "u"])?;
        w.flush().map_err(io_err(path))?;
        return Ok(());
    };
    let mut header = vec!["time".to_string()];
    header.extend(columns("y", first.y.len()));
    header.extend(columns("lambda", first.lambda.len()));
    header.extend(columns("u", first.u.len()));
    w.write_record(&header)?;
    for s in &lp.signals {
        let mut row = vec![format_ms(quantum, s.t)];
        push_values(&mut row, &s.y);
        push_values(&mut row, &s.lambda);
        push_values(&mut row, &s.u);
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_instances(path: &Path, quantum: Quantum, lp: &LoopReport) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "k",
        "alpha",
        "beta",
        "gamma",
        "delta",
        "predicted_delta",
        "alpha_hat",
        "epsilon",
        "missed",
    ])?;
    for r in &lp.instances {
        w.write_record([
            r.k.to_string(),
            format_ms(quantum, r.alpha),
            opt_ms(quantum, r.beta),
            opt_ms(quantum, r.gamma),
            opt_ms(quantum, r.delta()),
            opt_ms(quantum, r.predicted),
            opt_ms(quantum, r.alpha_hat),
            r.epsilon().map(|e| format_signed_ms(quantum, e)).unwrap_or_default(),
            r.missed.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Run summary as aligned `key value` lines and tables.
pub fn report_text(name: &str, report: &RunReport) -> String {
    let q = report.quantum;
    let mut s = String::new();
    let yn = |b: bool| if b { "yes" } else { "no" };
    let _ = writeln!(s, "scenario        {name}");
    let _ = writeln!(s, "strategy        {}", report.strategy.as_str());
    let _ = writeln!(s, "horizon_ms      {}", format_ms(q, report.horizon));
    let _ = writeln!(s, "quantum_ns      {}", q.nanos());
    let _ = writeln!(s, "schedulable     {}", yn(report.verdict.schedulable));
    if report.verdict.margin != cantiming::SchedVerdict::UNBOUNDED {
        let _ = writeln!(s, "margin_ms       {}", format_signed_ms(q, report.verdict.margin));
    }
    if let Some((chain, at)) = report.verdict.first_violation {
        let _ = writeln!(s, "first_violation chain {chain} at {} ms", format_ms(q, at));
    }
    let _ = writeln!(s, "deadline_misses {}", report.deadline_misses());
    let _ = writeln!(s, "events          {}", report.trace.len());
    let _ = writeln!(s, "hybrid_ms       {:.3}", report.timings.hybrid.as_secs_f64() * 1e3);
    let _ = writeln!(s, "oracle_ms       {:.3}", report.timings.oracle.as_secs_f64() * 1e3);
    let _ = writeln!(s, "engines_agree   {}", yn(report.timings.agree));
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "loop  cost            wc_delay_ms  solves  unconverged  fallbacks  skipped  max_residual"
    );
    for lp in &report.loops {
        let _ = writeln!(
            s,
            "{:<5} {:<15.9e} {:<12} {:<7} {:<12} {:<10} {:<8} {:.3e}",
            lp.chain,
            lp.cost,
            opt_ms(q, lp.worst_case_delay),
            lp.stats.solves,
            lp.stats.unconverged,
            lp.stats.fallbacks,
            lp.stats.skipped,
            lp.stats.max_residual
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "instances (ms)");
    let _ = writeln!(
        s,
        "chain k     alpha     beta      gamma     delta   predicted epsilon missed"
    );
    for lp in &report.loops {
        for r in &lp.instances {
            let _ = writeln!(
                s,
                "{:<5} {:<5} {:<9} {:<9} {:<9} {:<7} {:<9} {:<7} {}",
                lp.chain,
                r.k,
                format_ms(q, r.alpha),
                opt_ms(q, r.beta),
                opt_ms(q, r.gamma),
                opt_ms(q, r.delta()),
                opt_ms(q, r.predicted),
                r.epsilon().map(|e| format_signed_ms(q, e)).unwrap_or_default(),
                yn(r.missed)
            );
        }
    }
    if !report.notes.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "notes");
        for n in &report.notes {
            let _ = writeln!(s, "{n}");
        }
    }
    s
}

/// Writes every trace of `report` into `dir`; returns the CSV paths.
pub fn write_run(dir: &Path, name: &str, report: &RunReport) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let q = report.quantum;
    let mut written = Vec::new();
    let events = dir.join("events.csv");
    write_events(&events, q, &report.trace)?;
    written.push(events);
    for lp in &report.loops {
        let p = dir.join(format!("loop{}_signals.csv", lp.chain));
        write_signals(&p, q, lp)?;
        written.push(p);
        let p = dir.join(format!("loop{}_instances.csv", lp.chain));
        write_instances(&p, q, lp)?;
        written.push(p);
    }
    let report_path = dir.join("report.txt");
    fs::write(&report_path, report_text(name, report)).map_err(io_err(&report_path))?;
    Ok(written)
}
