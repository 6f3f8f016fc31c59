//! Timing model, observer, schedulability checks and delay-aware MPC for
//! control loops closed over a shared CAN bus.
//!
//! Each control loop is a message chain: a sensor message prepared and sent
//! to the controller, then a control message prepared and sent to the
//! actuator. [`hybrid`] evolves the bus and every chain between and across
//! significant moments, [`oracle`] replays the same bus tick by tick,
//! [`observer`] reconstructs the state from what a controller can see,
//! [`sched`] checks deadlines and [`mpc`] plans control moves against the
//! predicted delays.

pub mod chain;
pub mod error;
pub mod event;
pub mod hybrid;
pub mod mpc;
pub mod observer;
pub mod oracle;
pub mod sched;
pub mod state;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod time;

pub use chain::{ChainId, ChainParams, MessageChainSpec, Priority, Segment, SubMessage};
pub use error::{ConfigError, ModelError, MpcError, ObserverError, SchedError};
pub use event::{EventKind, EventTrace, InstanceTiming, TimedEvent};
pub use hybrid::{simulate_hybrid, Cause, SignificantMoment};
pub use observer::{AlphaEstimate, ChainEstimate, Observer, StateEstimate};
pub use oracle::{diff_traces, simulate_oracle, Discrepancy};
pub use sched::{instantaneous_check, window_check, worst_case_delay, SchedVerdict};
pub use state::{BusState, ChainState, Stage};
pub use time::{Quantum, Time};
