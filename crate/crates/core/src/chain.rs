//! Static description of message chains.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::time::Time;

/// 1-based index of a message chain. `ChainId(n)` lives at position `n - 1`
/// of every per-chain vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainId(pub u32);

impl ChainId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    #[inline]
    pub fn from_index(index: usize) -> ChainId {
        ChainId(index as u32 + 1)
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// CAN identifier of a sub-message; the smaller value wins arbitration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Priority(pub u32);

/// The two sub-messages of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubMessage {
    Sensor,
    Control,
}

/// Per-instance timing parameters of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainParams {
    /// Sampling interval `T`.
    pub period: Time,
    /// `I1`: sampling and preparation of the sensor message.
    pub sensor_prep: Time,
    /// `C1`: sensor message transmission.
    pub sensor_tx: Time,
    /// `I2`: controller computation and preparation of the control message.
    pub control_prep: Time,
    /// `C2`: control message transmission. Zero for general-purpose chains.
    pub control_tx: Time,
    pub sensor_priority: Priority,
    pub control_priority: Priority,
}

impl ChainParams {
    /// `I1 + C1 + I2 + C2`: residue at arrival and the no-contention delay.
    #[inline]
    pub fn work(&self) -> Time {
        self.sensor_prep + self.sensor_tx + self.control_prep + self.control_tx
    }

    /// Residue once the sensor message is ready: `C1 + I2 + C2`.
    #[inline]
    pub fn sensor_ready_residue(&self) -> Time {
        self.sensor_tx + self.control_prep + self.control_tx
    }

    /// Residue once the sensor message is delivered: `I2 + C2`.
    #[inline]
    pub fn sensor_done_residue(&self) -> Time {
        self.control_prep + self.control_tx
    }

    #[inline]
    pub fn priority(&self, sub: SubMessage) -> Priority {
        match sub {
            SubMessage::Sensor => self.sensor_priority,
            SubMessage::Control => self.control_priority,
        }
    }

    #[inline]
    pub fn tx_time(&self, sub: SubMessage) -> Time {
        match sub {
            SubMessage::Sensor => self.sensor_tx,
            SubMessage::Control => self.control_tx,
        }
    }

    /// A chain that carries no control message (`I2 = C2 = 0`).
    pub fn is_general_purpose(&self) -> bool {
        self.control_prep == Time::ZERO && self.control_tx == Time::ZERO
    }

    fn validate(&self, chain: ChainId, segment: usize) -> Result<(), ConfigError> {
        let at = |field: &str| format!("chains[{chain}].segments[{segment}].{field}");
        if self.period == Time::ZERO {
            return Err(ConfigError::invalid(at("period"), "period must be positive"));
        }
        if self.sensor_tx == Time::ZERO {
            return Err(ConfigError::invalid(
                at("sensor_tx"),
                "every chain needs a sensor message with positive transmission time",
            ));
        }
        if self.sensor_priority == self.control_priority {
            return Err(ConfigError::DuplicatePriority {
                priority: self.sensor_priority.0,
                first: at("sensor_priority"),
                second: at("control_priority"),
            });
        }
        Ok(())
    }
}

/// A piecewise-constant stretch of a chain's parameter schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Time,
    /// `None` marks a dormant stretch: no instances are released in it.
    pub params: Option<ChainParams>,
}

/// Static description of one chain: its first release and its parameter
/// schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageChainSpec {
    pub id: ChainId,
    pub first_arrival: Time,
    pub segments: Vec<Segment>,
}

impl MessageChainSpec {
    /// A chain with one parameter set for all time.
    pub fn periodic(id: ChainId, params: ChainParams) -> Self {
        MessageChainSpec {
            id,
            first_arrival: Time::ZERO,
            segments: vec![Segment {
                start: Time::ZERO,
                params: Some(params),
            }],
        }
    }

    /// Parameters in force at `t`: the last segment starting at or before `t`.
    pub fn params_at(&self, t: Time) -> Option<&ChainParams> {
        let idx = self.segments.partition_point(|s| s.start <= t);
        idx.checked_sub(1).and_then(|i| self.segments[i].params.as_ref())
    }

    /// Start of the first active segment strictly after `t`.
    pub fn next_activation_after(&self, t: Time) -> Option<Time> {
        self.segments
            .iter()
            .find(|s| s.start > t && s.params.is_some())
            .map(|s| s.start)
    }

    /// The parameters of the first segment, used as the nominal message set.
    pub fn nominal(&self) -> Option<&ChainParams> {
        self.params_at(self.first_arrival)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.segments.is_empty() {
            return Err(ConfigError::invalid(
                format!("chains[{}].segments", self.id),
                "at least one segment is required",
            ));
        }
        for (i, pair) in self.segments.windows(2).enumerate() {
            if pair[1].start <= pair[0].start {
                return Err(ConfigError::invalid(
                    format!("chains[{}].segments[{}].start", self.id, i + 1),
                    "segments must be ordered strictly by start time",
                ));
            }
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if let Some(p) = &seg.params {
                p.validate(self.id, i)?;
            }
        }
        if self.params_at(self.first_arrival).is_none() {
            return Err(ConfigError::invalid(
                format!("chains[{}].first_arrival", self.id),
                "no active segment covers the first arrival",
            ));
        }
        Ok(())
    }
}

/// Checks chain numbering (`1..=N` in order), per-chain invariants and global
/// uniqueness of priorities across chains.
pub fn validate_chains(specs: &[MessageChainSpec]) -> Result<(), ConfigError> {
    let mut owner: HashMap<Priority, (ChainId, String)> = HashMap::new();
    for (i, spec) in specs.iter().enumerate() {
        if spec.id != ChainId::from_index(i) {
            return Err(ConfigError::invalid(
                format!("chains[{i}].id"),
                format!("expected chain id {}, found {}", i + 1, spec.id),
            ));
        }
        spec.validate()?;
        for (s, seg) in spec.segments.iter().enumerate() {
            let Some(p) = &seg.params else { continue };
            for (prio, field) in [
                (p.sensor_priority, "sensor_priority"),
                (p.control_priority, "control_priority"),
            ] {
                let here = format!("chains[{}].segments[{s}].{field}", spec.id);
                match owner.get(&prio) {
                    Some((other, first)) if *other != spec.id => {
                        return Err(ConfigError::DuplicatePriority {
                            priority: prio.0,
                            first: first.clone(),
                            second: here,
                        });
                    }
                    Some(_) => {}
                    None => {
                        owner.insert(prio, (spec.id, here));
                    }
                }
            }
        }
    }
    // Within one chain a priority may not switch between the two sub-messages.
    for spec in specs {
        let mut role: HashMap<Priority, SubMessage> = HashMap::new();
        for (s, seg) in spec.segments.iter().enumerate() {
            let Some(p) = &seg.params else { continue };
            for sub in [SubMessage::Sensor, SubMessage::Control] {
                let prio = p.priority(sub);
                if let Some(prev) = role.insert(prio, sub) {
                    if prev != sub {
                        return Err(ConfigError::DuplicatePriority {
                            priority: prio.0,
                            first: format!("chains[{}] ({prev:?})", spec.id),
                            second: format!("chains[{}].segments[{s}] ({sub:?})", spec.id),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}
