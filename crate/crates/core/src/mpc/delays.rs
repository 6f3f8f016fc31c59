//! Delay prediction by running the timing model forward from an estimated
//! state.

use crate::chain::{ChainId, MessageChainSpec};
use crate::error::MpcError;
use crate::event::EventKind;
use crate::hybrid::simulate_hybrid_with;
use crate::state::BusState;
use crate::time::{Quantum, Time};

use super::problem::DelaySchedule;

/// Predicted release and delay of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictedInstance {
    pub instance: u64,
    pub alpha: Time,
    pub delay: Time,
    /// `false` when the instance does not complete inside the simulated
    /// window and its delay is carried over from an earlier prediction.
    pub exact: bool,
}

/// Delays of the instances of `chain` released in `[t0, t0 + horizon)`,
/// simulating from `estimate` (taken at `estimate.now >= t0`) up to
/// `t0 + horizon`.
///
/// An instance still in flight at the end of the window gets the last exact
/// delay of the chain, or its no-contention work if there is none. Any
/// deadline miss in the window is an error: the prediction assumes a
/// schedulable bus.
pub fn predict_delays(
    specs: &[MessageChainSpec],
    estimate: &BusState,
    chain: ChainId,
    t0: Time,
    horizon: Time,
) -> Result<Vec<PredictedInstance>, MpcError> {
    let st = estimate
        .chains
        .get(chain.index())
        .ok_or(MpcError::NoActiveInstance(chain))?;
    let end = t0 + horizon;
    if estimate.now < t0 || estimate.now > end {
        return Err(crate::error::ModelError::Precondition(format!(
            "estimate at {} lies outside the window [{t0}, {end}]",
            estimate.now
        ))
        .into());
    }
    let (_, trace) = simulate_hybrid_with(specs, estimate, end, |_, _| {})?;
    if let Some(miss) = trace.deadline_misses().next() {
        return Err(MpcError::PredictedMiss {
            chain: miss.chain,
            at: miss.at,
        });
    }

    let mut out: Vec<PredictedInstance> = Vec::new();
    let mut releases: Vec<(u64, Time, Time)> = Vec::new();
    if let (Some(k), Some(p)) = (st.instance, st.active) {
        let alpha = estimate.now - st.delay;
        if alpha >= t0 && alpha < end {
            releases.push((k, alpha, p.work()));
        }
    }
    for e in trace
        .iter()
        .filter(|e| e.chain == chain && e.kind == EventKind::Arrival)
    {
        if e.at >= end {
            continue;
        }
        let work = specs[chain.index()]
            .params_at(e.at)
            .map(|p| p.work())
            .ok_or(MpcError::NoActiveInstance(chain))?;
        releases.push((e.instance, e.at, work));
    }

    let mut last_exact: Option<Time> = None;
    for (k, alpha, work) in releases {
        let done = if Some(k) == st.instance && st.active.is_some() && st.residue == Time::ZERO {
            Some(st.delay)
        } else {
            trace
                .iter()
                .find(|e| e.chain == chain && e.instance == k && e.kind == EventKind::ControlTxEnd)
                .map(|e| e.at - alpha)
        };
        let row = match done {
            Some(delay) => {
                last_exact = Some(delay);
                PredictedInstance {
                    instance: k,
                    alpha,
                    delay,
                    exact: true,
                }
            }
            None => PredictedInstance {
                instance: k,
                alpha,
                delay: last_exact.unwrap_or(work),
                exact: false,
            },
        };
        out.push(row);
    }
    if out.is_empty() {
        return Err(MpcError::NoActiveInstance(chain));
    }
    Ok(out)
}

/// Schedule in seconds from predicted instances: one boundary at each
/// `alpha + delay` falling before `t0 + horizon`.
pub fn delay_schedule(predicted: &[PredictedInstance], quantum: Quantum, t0: Time, horizon: Time) -> DelaySchedule {
    let end = t0 + horizon;
    DelaySchedule {
        t0: quantum.to_secs(t0),
        boundaries: predicted
            .iter()
            .map(|p| p.alpha + p.delay)
            .filter(|&b| b < end)
            .map(|b| quantum.to_secs(b))
            .collect(),
    }
}
