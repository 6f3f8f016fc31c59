//! The hybrid timing model.
//!
//! Between significant moments every state component evolves at a fixed
//! rate: deadlines fall at unit rate, residues fall only in the preparation
//! and transmission stages, delays grow while the residue is positive. At a
//! significant moment the state jumps: a transmission ends, a preparation
//! ends, an instance arrives, and the idle bus is re-arbitrated.
//!
//! The next significant moment is `S = min(S1, S2, S3)`:
//!
//! * `S1`, remaining bus occupancy: `r_ID - (I2 + C2) * sgn(max(0, r_ID - C2))`
//! * `S2`, remaining preparation over chains in a preparation stage:
//!   `r - C2 - (C1 + I2) * sgn(max(0, r - I2 - C2))`
//! * `S3`, earliest arrival: `min d`
//!
//! Coincident jumps are processed in a fixed order: transmission end,
//! preparation ends by ascending chain, arrivals by ascending chain (deadline
//! misses first), then arbitration. Zero-length stages are crossed
//! immediately after the jump that enters them.

use crate::chain::{ChainId, MessageChainSpec, SubMessage};
use crate::error::ModelError;
use crate::event::{EventKind, EventTrace, TimedEvent};
use crate::state::{BusState, ChainState, Stage};
use crate::time::Time;

/// What makes a moment significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cause {
    TransmissionEnd(ChainId),
    PreparationEnd(ChainId),
    Arrival(ChainId),
}

impl Cause {
    pub fn chain(self) -> ChainId {
        match self {
            Cause::TransmissionEnd(c) | Cause::PreparationEnd(c) | Cause::Arrival(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignificantMoment {
    /// Distance from `now` to the moment.
    pub after: Time,
    /// Every cause that falls exactly on the moment.
    pub causes: Vec<Cause>,
}

/// `S1`: time until the chain on the bus finishes its current frame.
pub fn remaining_occupancy(bus: &BusState) -> Option<(ChainId, Time)> {
    let id = bus.bus?;
    let st = bus.chain(id);
    let p = st.active?;
    let tail = if st.residue > p.control_tx {
        p.sensor_done_residue()
    } else {
        Time::ZERO
    };
    Some((id, st.residue.saturating_sub(tail)))
}

/// Remaining preparation time of one chain, if it is preparing.
fn preparation_left(bus: &BusState, id: ChainId) -> Result<Option<Time>, ModelError> {
    let st = bus.chain(id);
    let Some(p) = st.active else { return Ok(None) };
    match bus.stage(id)? {
        Stage::PrepSensor | Stage::PrepControl => {
            let r = st.residue;
            let tail = if r > p.sensor_done_residue() {
                p.sensor_tx + p.control_prep
            } else {
                Time::ZERO
            };
            Ok(Some(r - p.control_tx - tail))
        }
        _ => Ok(None),
    }
}

/// `S2`: the smallest remaining preparation time among preparing chains.
pub fn remaining_preparation(bus: &BusState) -> Result<Option<Time>, ModelError> {
    let mut best: Option<Time> = None;
    for id in bus.ids() {
        if let Some(left) = preparation_left(bus, id)? {
            best = Some(best.map_or(left, |b| b.min(left)));
        }
    }
    Ok(best)
}

/// `S3`: the earliest next arrival.
pub fn earliest_arrival(bus: &BusState) -> Option<Time> {
    bus.chains.iter().map(|c| c.deadline).filter(|d| !d.is_never()).min()
}

/// Distance to the next significant moment and its causes, or `None` if
/// nothing will ever happen again.
pub fn next_significant_moment(bus: &BusState) -> Result<Option<SignificantMoment>, ModelError> {
    let s1 = remaining_occupancy(bus);
    let mut preps = Vec::new();
    for id in bus.ids() {
        if let Some(left) = preparation_left(bus, id)? {
            preps.push((id, left));
        }
    }
    let s2 = preps.iter().map(|&(_, l)| l).min();
    let s3 = earliest_arrival(bus);

    let Some(s) = [s1.map(|(_, t)| t), s2, s3].into_iter().flatten().min() else {
        return Ok(None);
    };
    let mut causes = Vec::new();
    if let Some((id, t)) = s1 {
        if t == s {
            causes.push(Cause::TransmissionEnd(id));
        }
    }
    causes.extend(
        preps
            .iter()
            .filter(|&&(_, l)| l == s)
            .map(|&(id, _)| Cause::PreparationEnd(id)),
    );
    causes.extend(bus.ids().filter(|&id| bus.chain(id).deadline == s).map(Cause::Arrival));
    Ok(Some(SignificantMoment { after: s, causes }))
}

fn flow_in_place(bus: &mut BusState, s: Time) -> Result<(), ModelError> {
    if s == Time::ZERO {
        return Ok(());
    }
    for i in 0..bus.chains.len() {
        let id = ChainId::from_index(i);
        let stage = bus.stage(id)?;
        let st = &mut bus.chains[i];
        if !st.deadline.is_never() {
            st.deadline = st
                .deadline
                .checked_sub(s)
                .ok_or_else(|| ModelError::corrupt(bus.now, format!("chain {id} flowed past its arrival")))?;
        }
        if st.residue > Time::ZERO {
            st.delay += s;
        }
        if stage.consumes_residue() {
            st.residue = st
                .residue
                .checked_sub(s)
                .ok_or_else(|| ModelError::corrupt(bus.now, format!("chain {id} flowed past a stage boundary")))?;
        }
    }
    bus.now += s;
    Ok(())
}

/// Continuous evolution over `s` ticks. `s` must not pass the next
/// significant moment.
pub fn flow(bus: &BusState, s: Time) -> Result<BusState, ModelError> {
    if let Some(m) = next_significant_moment(bus)? {
        if s > m.after {
            return Err(ModelError::Precondition(format!(
                "flow of {s} ticks crosses the significant moment {} ticks ahead",
                m.after
            )));
        }
    }
    let mut next = bus.clone();
    flow_in_place(&mut next, s)?;
    Ok(next)
}

/// Winner of arbitration on the idle bus: the waiting chain whose pending
/// sub-message has the numerically smallest identifier.
pub fn arbitrate(bus: &BusState) -> Result<Option<ChainId>, ModelError> {
    if let Some(owner) = bus.bus {
        return Err(ModelError::Precondition(format!(
            "arbitration while chain {owner} holds the bus"
        )));
    }
    let mut best: Option<(crate::chain::Priority, ChainId)> = None;
    for id in bus.ids() {
        let Some(sub) = bus.stage(id)?.waiting_for() else {
            continue;
        };
        let Some(p) = bus.chain(id).active else { continue };
        let prio = p.priority(sub);
        match best {
            Some((bp, bid)) if bp == prio => {
                return Err(ModelError::DuplicateContender {
                    priority: prio.0,
                    first: bid,
                    second: id,
                });
            }
            Some((bp, _)) if bp < prio => {}
            _ => best = Some((prio, id)),
        }
    }
    Ok(best.map(|(_, id)| id))
}

struct Emitter<'a> {
    out: &'a mut Vec<TimedEvent>,
    now: Time,
    transitions: usize,
    budget: usize,
}

impl Emitter<'_> {
    fn emit(&mut self, kind: EventKind, chain: ChainId, instance: u64) -> Result<(), ModelError> {
        self.transitions += 1;
        if self.transitions > self.budget {
            return Err(ModelError::corrupt(
                self.now,
                format!("more than {} transitions at one instant", self.budget),
            ));
        }
        self.out.push(TimedEvent {
            at: self.now,
            kind,
            chain,
            instance,
        });
        Ok(())
    }
}

fn active_instance(bus: &BusState, id: ChainId) -> Result<(crate::chain::ChainParams, u64), ModelError> {
    let st = bus.chain(id);
    match (st.active, st.instance) {
        (Some(p), Some(k)) => Ok((p, k)),
        _ => Err(ModelError::corrupt(
            bus.now,
            format!("chain {id} has no active instance"),
        )),
    }
}

fn apply_jumps_in_place(
    bus: &mut BusState,
    causes: &[Cause],
    specs: &[MessageChainSpec],
    out: &mut Vec<TimedEvent>,
) -> Result<(), ModelError> {
    if specs.len() != bus.chains.len() {
        return Err(ModelError::Precondition(format!(
            "{} specs for {} chain states",
            specs.len(),
            bus.chains.len()
        )));
    }
    let mut em = Emitter {
        out,
        now: bus.now,
        transitions: 0,
        budget: 4 * bus.chains.len() + 4,
    };

    let mut ends = Vec::new();
    let mut preps = Vec::new();
    let mut arrivals = Vec::new();
    for &c in causes {
        match c {
            Cause::TransmissionEnd(id) => ends.push(id),
            Cause::PreparationEnd(id) => preps.push(id),
            Cause::Arrival(id) => arrivals.push(id),
        }
    }
    for list in [&mut ends, &mut preps, &mut arrivals] {
        list.sort_unstable();
        list.dedup();
    }

    // 1. End of the frame on the bus.
    for id in ends {
        if bus.bus != Some(id) {
            return Err(ModelError::corrupt(
                bus.now,
                format!("transmission end for chain {id}, which does not hold the bus"),
            ));
        }
        let (p, k) = active_instance(bus, id)?;
        let r = bus.chain(id).residue;
        bus.bus = None;
        if r == p.sensor_done_residue() {
            em.emit(EventKind::SensorTxEnd, id, k)?;
            if p.control_prep == Time::ZERO {
                em.emit(EventKind::PrepEnd(SubMessage::Control), id, k)?;
                if p.control_tx == Time::ZERO {
                    em.emit(EventKind::ControlTxEnd, id, k)?;
                }
            }
        } else if r == Time::ZERO {
            em.emit(EventKind::ControlTxEnd, id, k)?;
        } else {
            return Err(ModelError::corrupt(
                bus.now,
                format!("chain {id} released the bus with residue {r}"),
            ));
        }
    }

    // 2. Preparations that just finished.
    for id in preps {
        let (p, k) = active_instance(bus, id)?;
        match bus.stage(id)? {
            Stage::WaitSensor => em.emit(EventKind::PrepEnd(SubMessage::Sensor), id, k)?,
            Stage::WaitControl => em.emit(EventKind::PrepEnd(SubMessage::Control), id, k)?,
            Stage::Done if p.control_tx == Time::ZERO => {
                em.emit(EventKind::PrepEnd(SubMessage::Control), id, k)?;
                em.emit(EventKind::ControlTxEnd, id, k)?;
            }
            other => {
                return Err(ModelError::corrupt(
                    bus.now,
                    format!("preparation end for chain {id} in {other:?}"),
                ))
            }
        }
    }

    // 3. New instances.
    for id in arrivals {
        let now = bus.now;
        let spec = &specs[id.index()];
        let old = *bus.chain(id);
        if old.deadline != Time::ZERO {
            return Err(ModelError::corrupt(
                now,
                format!("arrival of chain {id} with {} ticks left", old.deadline),
            ));
        }
        if old.active.is_some() && old.residue > Time::ZERO {
            em.emit(EventKind::DeadlineMiss, id, old.instance.unwrap_or(0))?;
            if bus.bus == Some(id) {
                bus.bus = None;
            }
        }
        let next_k = old.instance.map_or(0, |k| k + 1);
        let old_delay = old.delay;
        let st = &mut bus.chains[id.index()];
        match spec.params_at(now) {
            Some(&p) => {
                *st = ChainState {
                    deadline: p.period,
                    residue: p.work(),
                    delay: Time::ZERO,
                    instance: Some(next_k),
                    active: Some(p),
                };
                em.emit(EventKind::Arrival, id, next_k)?;
                if p.sensor_prep == Time::ZERO {
                    em.emit(EventKind::PrepEnd(SubMessage::Sensor), id, next_k)?;
                }
            }
            None => {
                st.active = None;
                st.residue = Time::ZERO;
                st.delay = old_delay;
                st.deadline = spec.next_activation_after(now).map_or(Time::NEVER, |t| t - now);
            }
        }
    }

    // 4. Arbitration on the idle bus.
    if bus.bus.is_none() {
        if let Some(winner) = arbitrate(bus)? {
            let sub = bus
                .stage(winner)?
                .waiting_for()
                .expect("arbitration picks waiting chains");
            let (_, k) = active_instance(bus, winner)?;
            bus.bus = Some(winner);
            em.emit(EventKind::BusGrant(sub), winner, k)?;
        }
    }
    Ok(())
}

/// Discrete jumps at a significant moment. `bus.now` must be the moment and
/// `causes` the causes reported by [`next_significant_moment`].
pub fn apply_jumps(
    bus: &BusState,
    causes: &[Cause],
    specs: &[MessageChainSpec],
) -> Result<(BusState, Vec<TimedEvent>), ModelError> {
    let mut next = bus.clone();
    let mut events = Vec::new();
    apply_jumps_in_place(&mut next, causes, specs, &mut events)?;
    Ok((next, events))
}

/// Runs the model from `from` up to and including `until`, calling
/// `on_moment` with the left-limit state and causes at every significant
/// moment before the jumps are applied.
pub fn simulate_hybrid_with<F>(
    specs: &[MessageChainSpec],
    from: &BusState,
    until: Time,
    mut on_moment: F,
) -> Result<(BusState, EventTrace), ModelError>
where
    F: FnMut(&BusState, &[Cause]),
{
    if until < from.now {
        return Err(ModelError::Precondition(format!(
            "window end {until} precedes the start {}",
            from.now
        )));
    }
    let mut bus = from.clone();
    let mut events = Vec::new();

    // Settle the starting instant: jumps due now, then arbitration.
    let start = next_significant_moment(&bus)?;
    let causes = match start {
        Some(m) if m.after == Time::ZERO => m.causes,
        _ => Vec::new(),
    };
    on_moment(&bus, &causes);
    apply_jumps_in_place(&mut bus, &causes, specs, &mut events)?;

    loop {
        let Some(m) = next_significant_moment(&bus)? else {
            let rest = until - bus.now;
            flow_in_place(&mut bus, rest)?;
            break;
        };
        if m.after == Time::ZERO {
            return Err(ModelError::corrupt(bus.now, "significant moment did not advance"));
        }
        if bus.now + m.after > until {
            let rest = until - bus.now;
            flow_in_place(&mut bus, rest)?;
            break;
        }
        flow_in_place(&mut bus, m.after)?;
        on_moment(&bus, &m.causes);
        apply_jumps_in_place(&mut bus, &m.causes, specs, &mut events)?;
    }
    Ok((bus, EventTrace::new(events)))
}

/// The timing model over `[from.now, until]`: final state and the ordered
/// event trace.
pub fn simulate_hybrid(
    specs: &[MessageChainSpec],
    from: &BusState,
    until: Time,
) -> Result<(BusState, EventTrace), ModelError> {
    simulate_hybrid_with(specs, from, until, |_, _| {})
}
