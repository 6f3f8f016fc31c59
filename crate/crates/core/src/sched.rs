//! Schedulability checks on timing-model states and the constant-delay
//! baseline.

use crate::chain::{ChainId, MessageChainSpec, Segment};
use crate::error::SchedError;
use crate::event::EventKind;
use crate::hybrid::simulate_hybrid_with;
use crate::state::{BusState, ChainState};
use crate::time::Time;

/// Outcome of a windowed check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedVerdict {
    pub schedulable: bool,
    /// Chain and significant moment of the first `r > d`.
    pub first_violation: Option<(ChainId, Time)>,
    /// Smallest `d - r` seen, in ticks. [`SchedVerdict::UNBOUNDED`] when
    /// nothing was checked.
    pub margin: i64,
}

impl SchedVerdict {
    pub const UNBOUNDED: i64 = i64::MAX;
}

/// `r <= d`.
pub fn instantaneous_check(state: &ChainState) -> bool {
    state.residue <= state.deadline
}

fn longest_period(specs: &[MessageChainSpec]) -> Time {
    specs
        .iter()
        .flat_map(|s| s.segments.iter().filter_map(|g| g.params))
        .map(|p| p.period)
        .max()
        .unwrap_or(Time::ZERO)
}

/// Checks every instance released in `[from.now, until]`, plus those already
/// in flight at `from`, at the left limit of every significant moment up to
/// its deadline.
pub fn window_check(specs: &[MessageChainSpec], from: &BusState, until: Time) -> Result<SchedVerdict, SchedError> {
    if until < from.now {
        return Err(crate::error::ModelError::Precondition(format!(
            "window end {until} precedes the start {}",
            from.now
        ))
        .into());
    }
    let mut verdict = SchedVerdict {
        schedulable: true,
        first_violation: None,
        margin: SchedVerdict::UNBOUNDED,
    };
    let horizon = until + longest_period(specs);
    simulate_hybrid_with(specs, from, horizon, |bus, _| {
        for (i, st) in bus.chains.iter().enumerate() {
            if st.active.is_none() || st.residue == Time::ZERO {
                continue;
            }
            let released = bus.now - st.delay;
            if released > until {
                continue;
            }
            let slack = st.deadline.signed_diff(st.residue);
            verdict.margin = verdict.margin.min(slack);
            if !instantaneous_check(st) && verdict.first_violation.is_none() {
                verdict.schedulable = false;
                verdict.first_violation = Some((ChainId::from_index(i), bus.now));
            }
        }
    })?;
    Ok(verdict)
}

/// The message set in force when the scenario starts: each chain keeps only
/// its first segment, and a chain whose first segment is dormant never
/// releases.
pub fn nominal_specs(specs: &[MessageChainSpec]) -> Vec<MessageChainSpec> {
    specs
        .iter()
        .map(|s| {
            let first = s.segments.first().copied().unwrap_or(Segment {
                start: Time::ZERO,
                params: None,
            });
            MessageChainSpec {
                id: s.id,
                first_arrival: if first.params.is_some() {
                    s.first_arrival
                } else {
                    first.start
                },
                segments: vec![first],
            }
        })
        .collect()
}

/// Largest `gamma - alpha` of `chain` over instances completing by `probe`,
/// on the nominal message set.
pub fn worst_case_delay(specs: &[MessageChainSpec], chain: ChainId, probe: Time) -> Result<Time, SchedError> {
    let nominal = nominal_specs(specs);
    let start = BusState::initial(&nominal, Time::ZERO)?;
    let (_, trace) = simulate_hybrid_with(&nominal, &start, probe, |_, _| {})?;
    if let Some(miss) = trace.iter().find(|e| e.kind == EventKind::DeadlineMiss) {
        return Err(SchedError::InfeasibleBaseline {
            chain: miss.chain,
            at: miss.at,
        });
    }
    trace
        .delays(chain)
        .into_iter()
        .max()
        .ok_or(SchedError::NoCompletedInstance(chain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{ChainParams, Priority};

    fn st(d: u64, r: u64) -> ChainState {
        ChainState {
            deadline: Time(d),
            residue: Time(r),
            delay: Time(0),
            instance: Some(0),
            active: None,
        }
    }

    #[test]
    fn instantaneous_examples() {
        assert!(instantaneous_check(&st(10, 5)));
        assert!(!instantaneous_check(&st(5, 10)));
        assert!(instantaneous_check(&st(7, 7)));
    }

    #[test]
    fn empty_scenario_is_vacuously_schedulable() {
        let from = BusState {
            now: Time(0),
            chains: vec![],
            bus: None,
        };
        let v = window_check(&[], &from, Time(100)).unwrap();
        assert!(v.schedulable);
        assert_eq!(v.first_violation, None);
        assert_eq!(v.margin, SchedVerdict::UNBOUNDED);
    }

    #[test]
    fn lone_chain_baseline_is_its_work() {
        let p = ChainParams {
            period: Time(20),
            sensor_prep: Time(1),
            sensor_tx: Time(3),
            control_prep: Time(2),
            control_tx: Time(3),
            sensor_priority: Priority(1),
            control_priority: Priority(2),
        };
        let spec = MessageChainSpec::periodic(ChainId(1), p);
        assert_eq!(
            worst_case_delay(std::slice::from_ref(&spec), ChainId(1), Time(100)).unwrap(),
            Time(9)
        );
        let v = window_check(
            std::slice::from_ref(&spec),
            &BusState::initial(std::slice::from_ref(&spec), Time(0)).unwrap(),
            Time(100),
        )
        .unwrap();
        assert!(v.schedulable);
        assert_eq!(v.margin, 11);
    }

    #[test]
    fn overloaded_chain_fails_the_window() {
        let p = ChainParams {
            period: Time(8),
            sensor_prep: Time(1),
            sensor_tx: Time(3),
            control_prep: Time(2),
            control_tx: Time(3),
            sensor_priority: Priority(1),
            control_priority: Priority(2),
        };
        let spec = MessageChainSpec::periodic(ChainId(1), p);
        let from = BusState::initial(std::slice::from_ref(&spec), Time(0)).unwrap();
        let v = window_check(std::slice::from_ref(&spec), &from, Time(20)).unwrap();
        assert!(!v.schedulable);
        assert!(v.margin < 0);
        assert_eq!(v.first_violation.unwrap().0, ChainId(1));
        assert!(matches!(
            worst_case_delay(&[spec], ChainId(1), Time(20)),
            Err(SchedError::InfeasibleBaseline { .. })
        ));
    }
}
