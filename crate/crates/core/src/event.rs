//! Timestamped events shared by both simulation engines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainId, SubMessage};
use crate::time::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    /// `alpha`: the instance is released and the plant sampled.
    Arrival,
    /// Preparation of a sub-message finished; it is ready to contend.
    PrepEnd(SubMessage),
    /// The sub-message won arbitration and started transmitting.
    BusGrant(SubMessage),
    /// `beta`: the sensor message has been delivered.
    SensorTxEnd,
    /// `gamma`: the control message has been delivered.
    ControlTxEnd,
    /// The next instance arrived before this one finished.
    DeadlineMiss,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::Arrival,
        EventKind::PrepEnd(SubMessage::Sensor),
        EventKind::BusGrant(SubMessage::Sensor),
        EventKind::SensorTxEnd,
        EventKind::PrepEnd(SubMessage::Control),
        EventKind::BusGrant(SubMessage::Control),
        EventKind::ControlTxEnd,
        EventKind::DeadlineMiss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::PrepEnd(SubMessage::Sensor) => "prep_end_sensor",
            EventKind::BusGrant(SubMessage::Sensor) => "grant_sensor",
            EventKind::SensorTxEnd => "sensor_tx_end",
            EventKind::PrepEnd(SubMessage::Control) => "prep_end_control",
            EventKind::BusGrant(SubMessage::Control) => "grant_control",
            EventKind::ControlTxEnd => "control_tx_end",
            EventKind::DeadlineMiss => "deadline_miss",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimedEvent {
    pub at: Time,
    pub kind: EventKind,
    pub chain: ChainId,
    /// Instance index `k`, counted from 0 per chain.
    pub instance: u64,
}

impl fmt::Display for TimedEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} {} chain={} k={}",
            self.at, self.kind, self.chain, self.instance
        )
    }
}

/// One completed (or aborted) instance reconstructed from a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceTiming {
    pub chain: ChainId,
    pub instance: u64,
    pub alpha: Time,
    pub beta: Option<Time>,
    pub gamma: Option<Time>,
    pub missed: bool,
}

impl InstanceTiming {
    /// `delta = gamma - alpha`.
    pub fn delay(&self) -> Option<Time> {
        self.gamma.map(|g| g - self.alpha)
    }
}

/// Events in processing order: sorted by time, coincident events in the
/// engine's fixed tie order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTrace {
    pub events: Vec<TimedEvent>,
}

impl EventTrace {
    pub fn new(events: Vec<TimedEvent>) -> Self {
        EventTrace { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TimedEvent> {
        self.events.iter()
    }

    /// Times of every `kind` event of `chain`, in order.
    pub fn times(&self, kind: EventKind, chain: ChainId) -> Vec<Time> {
        self.events
            .iter()
            .filter(|e| e.kind == kind && e.chain == chain)
            .map(|e| e.at)
            .collect()
    }

    pub fn deadline_misses(&self) -> impl Iterator<Item = &TimedEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::DeadlineMiss)
    }

    pub fn has_deadline_miss(&self) -> bool {
        self.deadline_misses().next().is_some()
    }

    /// Per-instance `alpha`, `beta`, `gamma` of `chain`.
    pub fn instances(&self, chain: ChainId) -> Vec<InstanceTiming> {
        let mut out: Vec<InstanceTiming> = Vec::new();
        for e in self.events.iter().filter(|e| e.chain == chain) {
            if e.kind == EventKind::Arrival {
                out.push(InstanceTiming {
                    chain,
                    instance: e.instance,
                    alpha: e.at,
                    beta: None,
                    gamma: None,
                    missed: false,
                });
                continue;
            }
            let Some(row) = out.iter_mut().rev().find(|r| r.instance == e.instance) else {
                continue;
            };
            match e.kind {
                EventKind::SensorTxEnd => row.beta = Some(e.at),
                EventKind::ControlTxEnd => row.gamma = Some(e.at),
                EventKind::DeadlineMiss => row.missed = true,
                _ => {}
            }
        }
        out
    }

    /// Delays `gamma - alpha` of the completed instances of `chain`.
    pub fn delays(&self, chain: ChainId) -> Vec<Time> {
        self.instances(chain).iter().filter_map(InstanceTiming::delay).collect()
    }
}

impl<'a> IntoIterator for &'a EventTrace {
    type Item = &'a TimedEvent;
    type IntoIter = std::slice::Iter<'a, TimedEvent>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in EventKind::ALL {
            assert_eq!(k.as_str().parse::<EventKind>().unwrap(), k);
        }
        assert!("bogus".parse::<EventKind>().is_err());
    }

    #[test]
    fn instances_collect_alpha_beta_gamma() {
        let c = ChainId(1);
        let ev = |at, kind, k| TimedEvent {
            at: Time(at),
            kind,
            chain: c,
            instance: k,
        };
        let trace = EventTrace::new(vec![
            ev(0, EventKind::Arrival, 0),
            ev(4, EventKind::SensorTxEnd, 0),
            ev(9, EventKind::ControlTxEnd, 0),
            ev(20, EventKind::Arrival, 1),
            ev(24, EventKind::SensorTxEnd, 1),
            ev(40, EventKind::DeadlineMiss, 1),
            ev(40, EventKind::Arrival, 2),
        ]);
        let rows = trace.instances(c);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].delay(), Some(Time(9)));
        assert!(rows[1].missed && rows[1].gamma.is_none());
        assert_eq!(trace.delays(c), vec![Time(9)]);
        assert!(trace.has_deadline_miss());
    }
}
