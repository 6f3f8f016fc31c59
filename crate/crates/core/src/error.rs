use thiserror::Error;

use crate::chain::ChainId;
use crate::time::Time;

/// Invalid scenario or chain description. Every variant names the offending
/// field.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("duplicate priority {priority}: used by {first} and {second}")]
    DuplicatePriority {
        priority: u32,
        first: String,
        second: String,
    },
    #[error("{field}: {value} ms is not a whole number of {quantum_ns} ns ticks")]
    Misaligned { field: String, value: f64, quantum_ns: u64 },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Failures of the timing model itself.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    /// The state vector reached a configuration the model cannot produce.
    #[error("model corruption at t={at}: {detail}")]
    Corruption { at: Time, detail: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("chains {first} and {second} contend with the same priority {priority}")]
    DuplicateContender {
        priority: u32,
        first: ChainId,
        second: ChainId,
    },
}

impl ModelError {
    pub(crate) fn corrupt(at: Time, detail: impl Into<String>) -> Self {
        ModelError::Corruption {
            at,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObserverError {
    #[error("chain {chain}: reception at {beta} precedes the minimum sensor latency {latency}")]
    MalformedObservation { chain: ChainId, beta: Time, latency: Time },
    #[error("chain {chain}: estimated deadline is negative at t={now}")]
    StaleEstimate { chain: ChainId, now: Time },
    #[error("chain {chain}: control reception at {gamma} without a sensor reception")]
    OrphanControl { chain: ChainId, gamma: Time },
    #[error("chain {chain}: control reception at {gamma} before the earliest possible {earliest}")]
    EarlyControl {
        chain: ChainId,
        gamma: Time,
        earliest: Time,
    },
    #[error("chain {chain}: sensor reception at {beta} with no release to attribute it to")]
    NoRelease { chain: ChainId, beta: Time },
    #[error("unknown chain {0}")]
    UnknownChain(ChainId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedError {
    #[error("chain {chain} misses a deadline at t={at} while probing the baseline")]
    InfeasibleBaseline { chain: ChainId, at: Time },
    #[error("chain {0} completes no instance within the probe horizon")]
    NoCompletedInstance(ChainId),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid delay schedule: {0}")]
    InvalidSchedule(String),
    #[error("empty control policy")]
    EmptyPolicy,
    #[error("predicted deadline miss of chain {chain} at t={at}")]
    PredictedMiss { chain: ChainId, at: Time },
    #[error("chain {0} has no active instance to predict")]
    NoActiveInstance(ChainId),
    #[error(transparent)]
    Model(#[from] ModelError),
}
