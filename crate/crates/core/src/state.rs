//! Dynamic state of the timing model: per-chain `(d, r, o)` plus the bus
//! owner.

use serde::{Deserialize, Serialize};

use crate::chain::{ChainId, ChainParams, MessageChainSpec, SubMessage};
use crate::error::ModelError;
use crate::time::Time;

/// Deadline, residue and delay of one chain, with the instance they describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    /// `d`: time until the next instance arrives. [`Time::NEVER`] for a chain
    /// with no future activation.
    pub deadline: Time,
    /// `r`: least remaining processing and transmission time.
    pub residue: Time,
    /// `o`: time since the active instance started, frozen at completion.
    pub delay: Time,
    /// Index of the active instance; `None` before the first arrival.
    pub instance: Option<u64>,
    /// Parameters the active instance was released with. `None` before the
    /// first arrival and while dormant.
    pub active: Option<ChainParams>,
}

impl ChainState {
    /// State of a chain whose next arrival is `until_arrival` away.
    pub fn waiting_for_arrival(until_arrival: Time) -> Self {
        ChainState {
            deadline: until_arrival,
            residue: Time::ZERO,
            delay: Time::ZERO,
            instance: None,
            active: None,
        }
    }
}

/// The seven stages an instance walks through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    PrepSensor,
    WaitSensor,
    TxSensor,
    PrepControl,
    WaitControl,
    TxControl,
    Done,
}

impl Stage {
    /// Stages in which the residue decreases.
    #[inline]
    pub fn consumes_residue(self) -> bool {
        matches!(
            self,
            Stage::PrepSensor | Stage::TxSensor | Stage::PrepControl | Stage::TxControl
        )
    }

    #[inline]
    pub fn is_transmitting(self) -> bool {
        matches!(self, Stage::TxSensor | Stage::TxControl)
    }

    /// The sub-message a waiting stage contends with.
    #[inline]
    pub fn waiting_for(self) -> Option<SubMessage> {
        match self {
            Stage::WaitSensor => Some(SubMessage::Sensor),
            Stage::WaitControl => Some(SubMessage::Control),
            _ => None,
        }
    }
}

/// Derives the stage from the residue, the active parameters and whether the
/// chain owns the bus.
///
/// Boundary values follow the stage inequalities: `r = C1 + I2 + C2` off the
/// bus is waiting for the sensor slot, `r = C2` off the bus is waiting for the
/// control slot and `r = 0` is done. Zero-length stages are skipped naturally.
pub fn stage_of(state: &ChainState, params: &ChainParams, on_bus: bool) -> Result<Stage, ModelError> {
    let r = state.residue;
    let c2 = params.control_tx;
    let after_sensor = params.sensor_done_residue();
    let sensor_ready = params.sensor_ready_residue();
    let bad = |why: &str| {
        Err(ModelError::Precondition(format!(
            "residue {r} {why} (work {}, on_bus={on_bus})",
            params.work()
        )))
    };
    if r > params.work() {
        return bad("exceeds the instance work");
    }
    if on_bus {
        if r > after_sensor && r <= sensor_ready {
            Ok(Stage::TxSensor)
        } else if r > Time::ZERO && r <= c2 {
            Ok(Stage::TxControl)
        } else {
            bad("lies outside both transmission stages")
        }
    } else if r == Time::ZERO {
        Ok(Stage::Done)
    } else if r > sensor_ready {
        Ok(Stage::PrepSensor)
    } else if r == sensor_ready {
        Ok(Stage::WaitSensor)
    } else if r > after_sensor {
        bad("lies inside the sensor transmission stage but the chain is off the bus")
    } else if r > c2 {
        Ok(Stage::PrepControl)
    } else if r == c2 {
        Ok(Stage::WaitControl)
    } else {
        bad("lies inside the control transmission stage but the chain is off the bus")
    }
}

/// `Z = [D, R, O, ID]` at instant `now`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusState {
    pub now: Time,
    pub chains: Vec<ChainState>,
    /// Chain currently transmitting; `None` when the bus is idle.
    pub bus: Option<ChainId>,
}

impl BusState {
    /// State at `now` before any instance has been released.
    pub fn initial(specs: &[MessageChainSpec], now: Time) -> Result<BusState, ModelError> {
        let chains = specs
            .iter()
            .map(|s| {
                s.first_arrival
                    .checked_sub(now)
                    .map(ChainState::waiting_for_arrival)
                    .ok_or_else(|| {
                        ModelError::Precondition(format!(
                            "chain {} first arrives at {} before the start {now}",
                            s.id, s.first_arrival
                        ))
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(BusState { now, chains, bus: None })
    }

    #[inline]
    pub fn chain(&self, id: ChainId) -> &ChainState {
        &self.chains[id.index()]
    }

    pub fn stage(&self, id: ChainId) -> Result<Stage, ModelError> {
        let st = self.chain(id);
        match &st.active {
            None => Ok(Stage::Done),
            Some(p) => stage_of(st, p, self.bus == Some(id)),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ChainId> + '_ {
        (0..self.chains.len()).map(ChainId::from_index)
    }

    /// Mutual exclusion and bus/stage consistency.
    pub fn check_invariants(&self) -> Result<(), ModelError> {
        for id in self.ids() {
            let stage = self.stage(id)?;
            let owner = self.bus == Some(id);
            if stage.is_transmitting() != owner {
                return Err(ModelError::corrupt(
                    self.now,
                    format!("chain {id} in {stage:?} but bus owner is {:?}", self.bus),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Priority;

    fn params() -> ChainParams {
        ChainParams {
            period: Time(20),
            sensor_prep: Time(1),
            sensor_tx: Time(3),
            control_prep: Time(2),
            control_tx: Time(3),
            sensor_priority: Priority(1),
            control_priority: Priority(2),
        }
    }

    fn at(r: u64) -> ChainState {
        ChainState {
            deadline: Time(20),
            residue: Time(r),
            delay: Time(0),
            instance: Some(0),
            active: Some(params()),
        }
    }

    #[test]
    fn stage_boundaries_off_bus() {
        let p = params();
        let expect = [
            (9, Stage::PrepSensor),
            (8, Stage::WaitSensor),
            (5, Stage::PrepControl),
            (4, Stage::PrepControl),
            (3, Stage::WaitControl),
            (0, Stage::Done),
        ];
        for (r, stage) in expect {
            assert_eq!(stage_of(&at(r), &p, false).unwrap(), stage, "r={r}");
        }
        assert!(stage_of(&at(6), &p, false).is_err());
        assert!(stage_of(&at(2), &p, false).is_err());
        assert!(stage_of(&at(10), &p, false).is_err());
    }

    #[test]
    fn stage_boundaries_on_bus() {
        let p = params();
        assert_eq!(stage_of(&at(8), &p, true).unwrap(), Stage::TxSensor);
        assert_eq!(stage_of(&at(6), &p, true).unwrap(), Stage::TxSensor);
        assert_eq!(stage_of(&at(3), &p, true).unwrap(), Stage::TxControl);
        assert_eq!(stage_of(&at(1), &p, true).unwrap(), Stage::TxControl);
        assert!(stage_of(&at(9), &p, true).is_err());
        assert!(stage_of(&at(5), &p, true).is_err());
        assert!(stage_of(&at(0), &p, true).is_err());
    }

    #[test]
    fn zero_length_stages_are_skipped() {
        let mut p = params();
        p.sensor_prep = Time(0);
        p.control_prep = Time(0);
        p.control_tx = Time(0);
        let mut st = at(3);
        st.active = Some(p);
        assert_eq!(stage_of(&st, &p, false).unwrap(), Stage::WaitSensor);
        st.residue = Time(0);
        assert_eq!(stage_of(&st, &p, false).unwrap(), Stage::Done);
    }
}
