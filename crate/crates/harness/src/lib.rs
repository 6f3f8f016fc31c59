//! Scenario files, closed-loop co-simulation of control loops over a shared
//! bus, strategy comparison, engine benchmarks and trace files.

pub mod bench;
pub mod closed_loop;
pub mod compare;
pub mod config;
pub mod output;

use cantiming::{ConfigError, ModelError, MpcError, SchedError};
use thiserror::Error;

pub use bench::{bench_engines, bench_scaling, EngineBench, Scaling};
pub use closed_loop::{run_closed_loop, InstanceRow, LoopReport, RunReport, SignalRow};
pub use compare::{compare_strategies, Comparison};
pub use config::{load_scenario, parse_scenario, Scenario, ScenarioFile, Strategy};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace file: {0}")]
    Trace(String),
}
