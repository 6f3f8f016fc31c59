//! Both controller designs on the same scenario.

use std::fs;
use std::path::{Path, PathBuf};

use cantiming::ChainId;

use crate::closed_loop::{run_closed_loop, RunReport};
use crate::config::{Scenario, Strategy};
use crate::output::{format_ms, write_run};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub worst_case: RunReport,
    pub timing_model: RunReport,
}

impl Comparison {
    /// `(chain, cost_wc, cost_tm)` per loop.
    pub fn costs(&self) -> Vec<(ChainId, f64, f64)> {
        self.worst_case
            .loops
            .iter()
            .zip(&self.timing_model.loops)
            .map(|(w, t)| (w.chain, w.cost, t.cost))
            .collect()
    }

    /// Timing-model cost over worst-case cost per loop; `None` when the
    /// worst-case cost is zero.
    pub fn ratios(&self) -> Vec<(ChainId, Option<f64>)> {
        self.costs()
            .into_iter()
            .map(|(c, w, t)| (c, (w != 0.0).then(|| t / w)))
            .collect()
    }
}

/// Runs the two strategies side by side. The scenario's own `strategy`
/// field is ignored.
pub fn compare_strategies(sc: &Scenario) -> Result<Comparison, HarnessError> {
    let (wc, tm) = std::thread::scope(|s| {
        let wc = s.spawn(|| run_closed_loop(sc, Strategy::WorstCase));
        let tm = run_closed_loop(sc, Strategy::TimingModel);
        (wc.join().expect("worst-case leg panicked"), tm)
    });
    Ok(Comparison {
        worst_case: wc?,
        timing_model: tm?,
    })
}

fn ratio_text(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |r| r.to_string())
}

pub fn comparison_text(cmp: &Comparison) -> String {
    let mut s = String::from("loop  cost_worst_case  cost_timing_model  ratio\n");
    for ((chain, w, t), (_, r)) in cmp.costs().into_iter().zip(cmp.ratios()) {
        s += &format!(
            "{chain:<5} {w:<16.9e} {t:<18.9e} {}\n",
            r.map_or("n/a".into(), |r| if (1e-3..1e6).contains(&r) {
                format!("{r:.6}")
            } else {
                format!("{r:.6e}")
            })
        );
    }
    s
}

/// Per-strategy traces under `wc/` and `tm/`, plus `comparison.csv`
/// (`chain,cost_worst_case,cost_timing_model,ratio`) and
/// `loop<N>_compare.csv` (`time,lambda,y_wc,u_wc,y_tm,u_tm`, first
/// components).
pub fn write_comparison(dir: &Path, name: &str, cmp: &Comparison) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = write_run(&dir.join("wc"), name, &cmp.worst_case)?;
    written.extend(write_run(&dir.join("tm"), name, &cmp.timing_model)?);
    let path = dir.join("comparison.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["chain", "cost_worst_case", "cost_timing_model", "ratio"])?;
    for ((chain, cw, ct), (_, r)) in cmp.costs().into_iter().zip(cmp.ratios()) {
        w.write_record([chain.to_string(), cw.to_string(), ct.to_string(), ratio_text(r)])?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    written.push(path);
    let q = cmp.timing_model.quantum;
    for (lw, lt) in cmp.worst_case.loops.iter().zip(&cmp.timing_model.loops) {
        let path = dir.join(format!("loop{}_compare.csv", lw.chain));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["time", "lambda", "y_wc", "u_wc", "y_tm", "u_tm"])?;
        for (a, b) in lw.signals.iter().zip(&lt.signals) {
            w.write_record([
                format_ms(q, a.t),
                a.lambda[0].to_string(),
                a.y[0].to_string(),
                a.u[0].to_string(),
                b.y[0].to_string(),
                b.u[0].to_string(),
            ])?;
        }
        w.flush().map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);
    }
    let summary = dir.join("comparison.txt");
    fs::write(&summary, comparison_text(cmp)).map_err(|source| HarnessError::Io {
        path: summary.display().to_string(),
        source,
    })?;
    Ok(written)
}
