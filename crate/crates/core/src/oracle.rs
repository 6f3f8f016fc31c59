//! Brute-force reference simulator.
//!
//! Advances time one quantum at a time and tracks each chain through its
//! phases by counting elapsed ticks. Nothing here uses deadlines, residues or
//! significant moments; it shares only the event vocabulary with
//! [`crate::hybrid`], so agreement between the two is evidence rather than
//! tautology.

use std::fmt;

use crate::chain::{ChainId, ChainParams, MessageChainSpec, SubMessage};
use crate::event::{EventKind, EventTrace, TimedEvent};
use crate::time::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// No instance released yet, or dormant.
    Idle,
    PrepSensor,
    WaitSensor,
    TxSensor,
    PrepControl,
    WaitControl,
    TxControl,
    Done,
}

#[derive(Debug, Clone)]
struct Node {
    phase: Phase,
    elapsed: u64,
    instance: Option<u64>,
    params: Option<ChainParams>,
    next_arrival: Option<u64>,
}

fn lookup(spec: &MessageChainSpec, t: u64) -> Option<ChainParams> {
    let mut found = None;
    for seg in &spec.segments {
        if seg.start.0 <= t {
            found = seg.params;
        } else {
            break;
        }
    }
    found
}

fn next_active_start(spec: &MessageChainSpec, t: u64) -> Option<u64> {
    spec.segments
        .iter()
        .filter(|s| s.start.0 > t && s.params.is_some())
        .map(|s| s.start.0)
        .next()
}

struct Oracle<'a> {
    specs: &'a [MessageChainSpec],
    nodes: Vec<Node>,
    owner: Option<usize>,
    now: u64,
    events: Vec<TimedEvent>,
}

impl Oracle<'_> {
    fn emit(&mut self, kind: EventKind, i: usize) {
        self.events.push(TimedEvent {
            at: Time(self.now),
            kind,
            chain: ChainId::from_index(i),
            instance: self.nodes[i].instance.unwrap_or(0),
        });
    }

    fn params(&self, i: usize) -> ChainParams {
        self.nodes[i].params.expect("phase implies parameters")
    }

    fn enter(&mut self, i: usize, phase: Phase) {
        self.nodes[i].phase = phase;
        self.nodes[i].elapsed = 0;
    }

    /// Finish control preparation, skipping a control message of zero length.
    fn control_ready(&mut self, i: usize) {
        self.emit(EventKind::PrepEnd(SubMessage::Control), i);
        if self.params(i).control_tx.0 == 0 {
            self.emit(EventKind::ControlTxEnd, i);
            self.enter(i, Phase::Done);
        } else {
            self.enter(i, Phase::WaitControl);
        }
    }

    fn boundary(&mut self) {
        // Frame completion.
        if let Some(i) = self.owner {
            let p = self.params(i);
            let node = &self.nodes[i];
            match node.phase {
                Phase::TxSensor if node.elapsed == p.sensor_tx.0 => {
                    self.owner = None;
                    self.emit(EventKind::SensorTxEnd, i);
                    self.enter(i, Phase::PrepControl);
                    if p.control_prep.0 == 0 {
                        self.control_ready(i);
                    }
                }
                Phase::TxControl if node.elapsed == p.control_tx.0 => {
                    self.owner = None;
                    self.emit(EventKind::ControlTxEnd, i);
                    self.enter(i, Phase::Done);
                }
                _ => {}
            }
        }

        // Local processing that just finished.
        for i in 0..self.nodes.len() {
            let node = &self.nodes[i];
            match node.phase {
                Phase::PrepSensor if node.elapsed == self.params(i).sensor_prep.0 => {
                    self.emit(EventKind::PrepEnd(SubMessage::Sensor), i);
                    self.enter(i, Phase::WaitSensor);
                }
                Phase::PrepControl if node.elapsed == self.params(i).control_prep.0 => {
                    self.control_ready(i);
                }
                _ => {}
            }
        }

        // Sampling instants.
        for i in 0..self.nodes.len() {
            if self.nodes[i].next_arrival != Some(self.now) {
                continue;
            }
            let unfinished = !matches!(self.nodes[i].phase, Phase::Idle | Phase::Done);
            if unfinished {
                self.emit(EventKind::DeadlineMiss, i);
                if self.owner == Some(i) {
                    self.owner = None;
                }
            }
            match lookup(&self.specs[i], self.now) {
                Some(p) => {
                    let node = &mut self.nodes[i];
                    node.instance = Some(node.instance.map_or(0, |k| k + 1));
                    node.params = Some(p);
                    node.next_arrival = Some(self.now + p.period.0);
                    self.enter(i, Phase::PrepSensor);
                    self.emit(EventKind::Arrival, i);
                    if p.sensor_prep.0 == 0 {
                        self.emit(EventKind::PrepEnd(SubMessage::Sensor), i);
                        self.enter(i, Phase::WaitSensor);
                    }
                }
                None => {
                    let node = &mut self.nodes[i];
                    node.phase = Phase::Idle;
                    node.next_arrival = next_active_start(&self.specs[i], self.now);
                }
            }
        }

        // Contention for a free bus.
        if self.owner.is_none() {
            let mut best: Option<(u32, usize, SubMessage)> = None;
            for (i, node) in self.nodes.iter().enumerate() {
                let (prio, sub) = match node.phase {
                    Phase::WaitSensor => (self.params(i).sensor_priority.0, SubMessage::Sensor),
                    Phase::WaitControl => (self.params(i).control_priority.0, SubMessage::Control),
                    _ => continue,
                };
                if best.is_none_or(|(b, _, _)| prio < b) {
                    best = Some((prio, i, sub));
                }
            }
            if let Some((_, i, sub)) = best {
                self.owner = Some(i);
                self.emit(EventKind::BusGrant(sub), i);
                let phase = match sub {
                    SubMessage::Sensor => Phase::TxSensor,
                    SubMessage::Control => Phase::TxControl,
                };
                self.enter(i, phase);
            }
        }
    }

    fn tick(&mut self) {
        for (i, node) in self.nodes.iter_mut().enumerate() {
            let busy = match node.phase {
                Phase::PrepSensor | Phase::PrepControl => true,
                Phase::TxSensor | Phase::TxControl => self.owner == Some(i),
                _ => false,
            };
            if busy {
                node.elapsed += 1;
            }
        }
        self.now += 1;
    }
}

/// Event trace of `specs` over `[0, until]`, computed one tick at a time.
pub fn simulate_oracle(specs: &[MessageChainSpec], until: Time) -> EventTrace {
    let nodes = specs
        .iter()
        .map(|s| Node {
            phase: Phase::Idle,
            elapsed: 0,
            instance: None,
            params: None,
            next_arrival: Some(s.first_arrival.0),
        })
        .collect();
    let mut o = Oracle {
        specs,
        nodes,
        owner: None,
        now: 0,
        events: Vec::new(),
    };
    loop {
        o.boundary();
        if o.now >= until.0 {
            break;
        }
        o.tick();
    }
    EventTrace::new(o.events)
}

/// One way two traces disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Discrepancy {
    /// Present in the first trace only.
    Missing(TimedEvent),
    /// Present in the second trace only.
    Extra(TimedEvent),
    /// Same event, different instants; `delta` is `b - a` in ticks.
    Shifted {
        kind: EventKind,
        chain: ChainId,
        instance: u64,
        a: Time,
        b: Time,
        delta: i64,
    },
    /// Same events at the same instants, listed in a different order.
    Reordered { index: usize, a: TimedEvent, b: TimedEvent },
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discrepancy::Missing(e) => {
                write!(f, "missing {} chain {} k={} at {}", e.kind, e.chain, e.instance, e.at)
            }
            Discrepancy::Extra(e) => {
                write!(f, "extra {} chain {} k={} at {}", e.kind, e.chain, e.instance, e.at)
            }
            Discrepancy::Shifted {
                kind,
                chain,
                instance,
                a,
                b,
                delta,
            } => write!(
                f,
                "shifted {kind} chain {chain} k={instance}: {a} vs {b} (delta {delta:+})"
            ),
            Discrepancy::Reordered { index, a, b } => write!(
                f,
                "order differs at position {index}: {} chain {} vs {} chain {}",
                a.kind, a.chain, b.kind, b.chain
            ),
        }
    }
}

/// Mismatches between two traces, ordered by the instant they occur at.
/// Events are matched by `(kind, chain, instance)` and occurrence; the list
/// is empty exactly when the traces are identical.
pub fn diff_traces(a: &EventTrace, b: &EventTrace) -> Vec<Discrepancy> {
    use std::collections::BTreeMap;

    type Key = (EventKind, ChainId, u64);
    let index = |t: &EventTrace| {
        let mut m: BTreeMap<Key, Vec<TimedEvent>> = BTreeMap::new();
        for e in t {
            m.entry((e.kind, e.chain, e.instance)).or_default().push(*e);
        }
        m
    };
    let ia = index(a);
    let ib = index(b);

    let mut out: Vec<(Time, Discrepancy)> = Vec::new();
    for (key, ea) in &ia {
        let eb = ib.get(key).map(Vec::as_slice).unwrap_or(&[]);
        for (n, x) in ea.iter().enumerate() {
            match eb.get(n) {
                Some(y) if y.at == x.at => {}
                Some(y) => out.push((
                    x.at.min(y.at),
                    Discrepancy::Shifted {
                        kind: key.0,
                        chain: key.1,
                        instance: key.2,
                        a: x.at,
                        b: y.at,
                        delta: y.at.signed_diff(x.at),
                    },
                )),
                None => out.push((x.at, Discrepancy::Missing(*x))),
            }
        }
        for y in eb.iter().skip(ea.len()) {
            out.push((y.at, Discrepancy::Extra(*y)));
        }
    }
    for (key, eb) in &ib {
        if !ia.contains_key(key) {
            out.extend(eb.iter().map(|y| (y.at, Discrepancy::Extra(*y))));
        }
    }
    if out.is_empty() {
        if let Some((index, (x, y))) = a.iter().zip(b.iter()).enumerate().find(|(_, (x, y))| x != y) {
            out.push((x.at, Discrepancy::Reordered { index, a: *x, b: *y }));
        }
    }
    out.sort_by_key(|(t, _)| *t);
    out.into_iter().map(|(_, d)| d).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Priority;

    fn params(period: u64) -> ChainParams {
        ChainParams {
            period: Time(period),
            sensor_prep: Time(1),
            sensor_tx: Time(3),
            control_prep: Time(2),
            control_tx: Time(3),
            sensor_priority: Priority(1),
            control_priority: Priority(2),
        }
    }

    #[test]
    fn single_chain_follows_the_no_contention_schedule() {
        let spec = MessageChainSpec::periodic(ChainId(1), params(20));
        let trace = simulate_oracle(&[spec], Time(45));
        let got: Vec<_> = trace.iter().map(|e| (e.at.0, e.kind, e.instance)).collect();
        let mut want = Vec::new();
        for k in 0..3u64 {
            let a = 20 * k;
            want.push((a, EventKind::Arrival, k));
            if a < 45 {
                want.push((a + 1, EventKind::PrepEnd(SubMessage::Sensor), k));
                want.push((a + 1, EventKind::BusGrant(SubMessage::Sensor), k));
            }
            if a + 4 <= 45 {
                want.push((a + 4, EventKind::SensorTxEnd, k));
            }
            if a + 6 <= 45 {
                want.push((a + 6, EventKind::PrepEnd(SubMessage::Control), k));
                want.push((a + 6, EventKind::BusGrant(SubMessage::Control), k));
            }
            if a + 9 <= 45 {
                want.push((a + 9, EventKind::ControlTxEnd, k));
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn dormant_stretch_releases_nothing() {
        let p = params(10);
        let spec = MessageChainSpec {
            id: ChainId(1),
            first_arrival: Time(5),
            segments: vec![
                crate::chain::Segment {
                    start: Time(5),
                    params: Some(p),
                },
                crate::chain::Segment {
                    start: Time(20),
                    params: None,
                },
                crate::chain::Segment {
                    start: Time(42),
                    params: Some(p),
                },
            ],
        };
        let trace = simulate_oracle(&[spec], Time(60));
        assert_eq!(
            trace.times(EventKind::Arrival, ChainId(1)),
            vec![Time(5), Time(15), Time(42), Time(52)]
        );
    }

    #[test]
    fn overrun_is_reported_and_aborted() {
        let mut p = params(8);
        p.control_prep = Time(3);
        let trace = simulate_oracle(&[MessageChainSpec::periodic(ChainId(1), p)], Time(8));
        let kinds: Vec<_> = trace.iter().filter(|e| e.at == Time(8)).map(|e| e.kind).collect();
        assert_eq!(kinds[0], EventKind::DeadlineMiss);
        assert_eq!(kinds[1], EventKind::Arrival);
    }

    fn ev(at: u64, kind: EventKind) -> TimedEvent {
        TimedEvent {
            at: Time(at),
            kind,
            chain: ChainId(1),
            instance: 0,
        }
    }

    #[test]
    fn diff_of_identical_traces_is_empty() {
        let t = EventTrace::new(vec![ev(0, EventKind::Arrival), ev(9, EventKind::ControlTxEnd)]);
        assert!(diff_traces(&t, &t).is_empty());
    }

    #[test]
    fn diff_names_a_one_tick_shift() {
        let a = EventTrace::new(vec![ev(0, EventKind::Arrival), ev(9, EventKind::ControlTxEnd)]);
        let b = EventTrace::new(vec![ev(0, EventKind::Arrival), ev(10, EventKind::ControlTxEnd)]);
        let d = diff_traces(&a, &b);
        assert_eq!(
            d,
            vec![Discrepancy::Shifted {
                kind: EventKind::ControlTxEnd,
                chain: ChainId(1),
                instance: 0,
                a: Time(9),
                b: Time(10),
                delta: 1,
            }]
        );
    }

    #[test]
    fn diff_reports_missing_extra_and_order() {
        let a = EventTrace::new(vec![ev(0, EventKind::Arrival), ev(9, EventKind::ControlTxEnd)]);
        let b = EventTrace::new(vec![ev(0, EventKind::Arrival), ev(3, EventKind::DeadlineMiss)]);
        let d = diff_traces(&a, &b);
        assert_eq!(d.len(), 2);
        assert!(matches!(d[0], Discrepancy::Extra(_)));
        assert!(matches!(d[1], Discrepancy::Missing(_)));

        let x = EventTrace::new(vec![ev(1, EventKind::Arrival), ev(1, EventKind::SensorTxEnd)]);
        let y = EventTrace::new(vec![ev(1, EventKind::SensorTxEnd), ev(1, EventKind::Arrival)]);
        assert!(matches!(
            diff_traces(&x, &y)[..],
            [Discrepancy::Reordered { index: 0, .. }]
        ));
    }
}
