//! Scenario generators for tests and benchmarks.
//!
//! Times are in ticks of a 1 µs quantum.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::chain::{ChainId, ChainParams, MessageChainSpec, Priority, Segment};
use crate::event::EventKind;
use crate::hybrid::{apply_jumps, simulate_hybrid_with, Cause};
use crate::mpc::{
    evaluate_cost, ControlPolicy, DelaySchedule, MpcProblem, PlantModel, Reference, SolverOptions, StateBounds,
};
use crate::observer::{estimated_schedulable, ChainEstimate, Observer};
use crate::state::BusState;
use crate::time::Time;
use nalgebra::{DMatrix, DVector};

pub const MS: u64 = 1_000;

/// Three control loops with periods 20, 30 and 40 ms, sensor preparation
/// 1 ms, computation 2 ms and 3 ms frames; loop 1 has the highest priority.
pub fn reference_chains() -> Vec<MessageChainSpec> {
    [20, 30, 40]
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let p = ChainParams {
                period: Time(t * MS),
                sensor_prep: Time(MS),
                sensor_tx: Time(3 * MS),
                control_prep: Time(2 * MS),
                control_tx: Time(3 * MS),
                sensor_priority: Priority(2 * i as u32 + 1),
                control_priority: Priority(2 * i as u32 + 2),
            };
            MessageChainSpec::periodic(ChainId::from_index(i), p)
        })
        .collect()
}

/// A duration in `[lo, hi]` µs, rounded to whole milliseconds when `aligned`.
fn span<R: Rng>(rng: &mut R, lo: u64, hi: u64, aligned: bool) -> Time {
    let v = rng.random_range(lo..=hi);
    if aligned {
        Time((v / MS * MS).max(lo.div_ceil(MS) * MS).min(hi))
    } else {
        Time(v)
    }
}

fn draw_params<R: Rng>(rng: &mut R, p1: Priority, p2: Priority) -> ChainParams {
    let aligned = rng.random_bool(0.5);
    let sensor_prep = span(rng, 0, 3 * MS, aligned);
    let sensor_tx = span(rng, 100, 5 * MS, aligned);
    let (control_prep, control_tx) = if rng.random_bool(0.2) {
        (Time::ZERO, Time::ZERO)
    } else {
        (span(rng, 0, 4 * MS, aligned), span(rng, 100, 5 * MS, aligned))
    };
    let work = sensor_prep.0 + sensor_tx.0 + control_prep.0 + control_tx.0;
    let period = span(rng, (work + MS).max(5 * MS), 50 * MS, aligned);
    ChainParams {
        period,
        sensor_prep,
        sensor_tx,
        control_prep,
        control_tx,
        sensor_priority: p1,
        control_priority: p2,
    }
}

/// Random message set of 1 to `max_chains` chains over roughly one second:
/// mixed millisecond and microsecond parameters, zero-length stages,
/// general-purpose chains, delayed first releases, mid-run parameter changes
/// and dormant stretches. Changes start on the chain's release grid.
pub fn random_chains<R: Rng>(rng: &mut R, max_chains: usize) -> Vec<MessageChainSpec> {
    let n = rng.random_range(1..=max_chains.max(1));
    let mut prios: Vec<u32> = (1..=2 * n as u32).collect();
    prios.shuffle(rng);
    (0..n)
        .map(|i| {
            let (p1, p2) = (Priority(prios[2 * i]), Priority(prios[2 * i + 1]));
            let first = draw_params(rng, p1, p2);
            let mut segments = Vec::new();
            let mut first_arrival = if rng.random_bool(0.7) {
                Time::ZERO
            } else {
                let aligned = rng.random_bool(0.5);
                span(rng, 0, 20 * MS, aligned)
            };
            if rng.random_bool(0.1) {
                // Sporadic: dormant until its first release.
                first_arrival = span(rng, MS, 300 * MS, false);
                segments.push(Segment {
                    start: Time::ZERO,
                    params: None,
                });
            }
            segments.push(Segment {
                start: first_arrival,
                params: Some(first),
            });
            if rng.random_bool(0.3) {
                let releases = rng.random_range(3..=25);
                let change = first_arrival + Time(first.period.0 * releases);
                if rng.random_bool(0.5) {
                    segments.push(Segment {
                        start: change,
                        params: Some(draw_params(rng, p1, p2)),
                    });
                } else {
                    segments.push(Segment {
                        start: change,
                        params: None,
                    });
                    if rng.random_bool(0.6) {
                        let aligned = rng.random_bool(0.5);
                        let back = change + span(rng, MS, 200 * MS, aligned);
                        segments.push(Segment {
                            start: back,
                            params: Some(draw_params(rng, p1, p2)),
                        });
                    }
                }
            }
            MessageChainSpec {
                id: ChainId::from_index(i),
                first_arrival,
                segments,
            }
        })
        .collect()
}

/// Member `seed` of the fixed random family: up to five chains from a
/// ChaCha8 stream seeded with `seed`.
pub fn family_member(seed: u64) -> Vec<MessageChainSpec> {
    random_chains(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed), 5)
}

/// Observer behaviour over one run, counted at every reception instant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObserverAudit {
    /// Receptions whose release estimate precedes the release of the
    /// instance that sent them.
    pub negative: u32,
    /// Receptions whose estimation error exceeds the chain's previous one.
    pub increasing: u32,
    /// Receptions credited to another instance than the sender.
    pub misattributed: u32,
    /// Receptions whose error exceeds the observer's own bound.
    pub over_bound: u32,
    /// Moments at which a known chain fails `r_hat <= d_hat`.
    pub unsound: u32,
    /// Moments at which the estimated `(d, r)` of a correctly attributed
    /// instance is off by more than the estimation error allows.
    pub residue: u32,
    pub receptions: u32,
    pub checked: u32,
    /// The run has at least one deadline miss.
    pub missed: bool,
}

/// Runs `specs` from rest over `[0, horizon]` and audits the observer
/// against the true state at every reception instant.
pub fn audit_observer(specs: &[MessageChainSpec], horizon: Time) -> Result<ObserverAudit, String> {
    let start = BusState::initial(specs, Time::ZERO).map_err(|e| e.to_string())?;
    let mut moments: Vec<(BusState, Vec<Cause>)> = Vec::new();
    let (_, trace) = simulate_hybrid_with(specs, &start, horizon, |bus, causes| {
        if causes.iter().any(|c| matches!(c, Cause::TransmissionEnd(_))) {
            moments.push((bus.clone(), causes.to_vec()));
        }
    })
    .map_err(|e| e.to_string())?;
    let instances: Vec<_> = specs.iter().map(|s| trace.instances(s.id)).collect();
    let mut audit = ObserverAudit {
        missed: trace.has_deadline_miss(),
        ..ObserverAudit::default()
    };
    let mut obs = Observer::new(specs);
    let mut last_eps: Vec<Option<i64>> = vec![None; specs.len()];
    let mut events = trace.iter().peekable();
    for (left, causes) in moments {
        let now = left.now;
        let (truth, _) = apply_jumps(&left, &causes, specs).map_err(|e| e.to_string())?;
        while let Some(e) = events.next_if(|e| e.at <= now) {
            if !obs.observe(e).map_err(|e| e.to_string())? || e.kind != EventKind::SensorTxEnd {
                continue;
            }
            audit.receptions += 1;
            let a = obs.alpha(e.chain).ok_or("reception without estimate")?;
            if a.instance != e.instance {
                audit.misattributed += 1;
            }
            let alpha = instances[e.chain.index()]
                .iter()
                .find(|r| r.instance == e.instance)
                .ok_or("reception of an unreleased instance")?
                .alpha;
            let eps = a.alpha_hat.signed_diff(alpha);
            if eps < 0 {
                audit.negative += 1;
            }
            if a.epsilon_bound.is_some_and(|b| eps > b.0 as i64) {
                audit.over_bound += 1;
            }
            let slot = &mut last_eps[e.chain.index()];
            if slot.is_some_and(|p| eps > p) {
                audit.increasing += 1;
            }
            *slot = Some(eps);
        }
        for (i, st) in truth.chains.iter().enumerate() {
            let id = ChainId::from_index(i);
            let ChainEstimate::Known {
                instance,
                alpha_hat,
                state,
                ..
            } = obs.estimate(id, now).map_err(|e| e.to_string())?
            else {
                continue;
            };
            audit.checked += 1;
            if !estimated_schedulable(state.deadline, state.residue) {
                audit.unsound += 1;
            }
            if st.active.is_none() || st.instance != Some(instance) {
                continue;
            }
            let Some(row) = instances[i].iter().find(|r| r.instance == instance) else {
                continue;
            };
            let eps = alpha_hat.signed_diff(row.alpha);
            let gap = state.residue.signed_diff(st.residue);
            let sensor_seen = row.beta.is_some_and(|b| b <= now);
            let ok = if sensor_seen {
                gap == 0
            } else {
                (0..=eps).contains(&gap)
            } && state.deadline.signed_diff(st.deadline) == eps;
            if !ok {
                audit.residue += 1;
            }
        }
    }
    Ok(audit)
}

/// A random MPC problem with a delay schedule inside its horizon.
pub struct MpcInstance {
    pub plant: PlantModel,
    pub pb: MpcProblem,
    pub x0: DVector<f64>,
    pub held: DVector<f64>,
    pub sched: DelaySchedule,
}

fn random_psd<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    scale * &m * m.transpose()
}

/// Up to three states, two inputs and two outputs, random weights and
/// reference, one to five moves, state bounds on roughly a third.
pub fn random_mpc_instance<R: Rng>(rng: &mut R) -> MpcInstance {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    let p = rng.random_range(1..=2);
    let plant = PlantModel::new(
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-20.0..20.0)),
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-5.0..5.0)),
        DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0)),
    )
    .unwrap();
    let horizon = rng.random_range(0.02..0.15);
    let t0 = rng.random_range(0.0..1.0);
    let k = rng.random_range(1..=5);
    let mut bs: Vec<f64> = (0..k).map(|_| t0 + rng.random_range(0.0..horizon)).collect();
    bs.sort_by(f64::total_cmp);
    bs.dedup();
    let reference = match rng.random_range(0..3) {
        0 => Reference::Constant(DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0))),
        1 => Reference::Square {
            amplitude: rng.random_range(0.0..1.0),
            period: rng.random_range(0.05..1.0),
        },
        _ => Reference::Sine {
            amplitude: rng.random_range(0.0..1.0),
            period: rng.random_range(0.05..1.0),
            phase: rng.random_range(0.0..6.0),
        },
    };
    let state_bounds = rng.random_bool(0.3).then(|| StateBounds {
        lower: DVector::from_element(n, -0.05),
        upper: DVector::from_element(n, 0.05),
        weight: 10.0,
    });
    let pb = MpcProblem {
        q1: random_psd(rng, p, 1.0),
        q2: random_psd(rng, m, 0.05),
        q3: random_psd(rng, n, 0.1),
        horizon,
        u_min: DVector::from_element(m, -1.0),
        u_max: DVector::from_element(m, 1.0),
        state_bounds,
        reference,
        solver: SolverOptions::default(),
    };
    MpcInstance {
        x0: DVector::from_fn(n, |_, _| rng.random_range(-0.1..0.1)),
        held: DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
        sched: DelaySchedule { t0, boundaries: bs },
        plant,
        pb,
    }
}

/// Moves drawn uniformly in [-1, 1].
pub fn random_policy<R: Rng>(rng: &mut R, inst: &MpcInstance) -> ControlPolicy {
    ControlPolicy {
        moves: (0..inst.sched.moves())
            .map(|_| DVector::from_fn(inst.plant.inputs(), |_, _| rng.random_range(-1.0..1.0)))
            .collect(),
    }
}

impl MpcInstance {
    pub fn cost(&self, policy: &ControlPolicy) -> f64 {
        evaluate_cost(&self.plant, &self.pb, &self.x0, &self.held, policy, &self.sched).unwrap()
    }
}
