//! State estimation from bus receptions.
//!
//! A controller node sees when every sensor and control frame finishes, but
//! not when a sensor sampled. The observer rebuilds an estimate `alpha_hat`
//! of each release from the reception times and derives `(d, r, o)` from it.
//! The estimate never precedes the true release and its error never grows
//! from one instance to the next.

use crate::chain::{ChainId, ChainParams, MessageChainSpec};
use crate::error::ObserverError;
use crate::event::{EventKind, TimedEvent};
use crate::state::{BusState, ChainState};
use crate::time::Time;

/// Reception times seen for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservedReception {
    pub chain: ChainId,
    pub instance: u64,
    pub beta: Option<Time>,
    pub gamma: Option<Time>,
}

/// Estimated release of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlphaEstimate {
    pub chain: ChainId,
    pub instance: u64,
    pub alpha_hat: Time,
    /// Upper bound on `alpha_hat - alpha` when one is known. `Some(0)` means
    /// the estimate is exact.
    pub epsilon_bound: Option<Time>,
}

/// Estimated `(d, r, o)` of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateEstimate {
    pub deadline: Time,
    pub residue: Time,
    pub delay: Time,
}

/// Release estimate for instance `k` from its sensor reception `beta`.
///
/// `prev` is the estimate of instance `k - 1` and `prev_period` the time from
/// its release to the next one; `params` are instance `k`'s parameters. The
/// first instance is placed as late as its sensor frame allows.
pub fn update_alpha(
    chain: ChainId,
    prev: Option<(&AlphaEstimate, Time)>,
    beta: Time,
    params: &ChainParams,
) -> Result<AlphaEstimate, ObserverError> {
    let latency = params.sensor_prep + params.sensor_tx;
    let latest = beta
        .checked_sub(latency)
        .ok_or(ObserverError::MalformedObservation { chain, beta, latency })?;
    Ok(match prev {
        None => AlphaEstimate {
            chain,
            instance: 0,
            alpha_hat: latest,
            epsilon_bound: None,
        },
        Some((p, period)) => AlphaEstimate {
            chain,
            instance: p.instance + 1,
            alpha_hat: (p.alpha_hat + period).min(latest),
            epsilon_bound: p.epsilon_bound,
        },
    })
}

/// `(d, r, o)` at `now` for the instance released at `alpha.alpha_hat`.
pub fn estimate_states(
    now: Time,
    alpha: &AlphaEstimate,
    obs: &ObservedReception,
    params: &ChainParams,
) -> Result<StateEstimate, ObserverError> {
    let stale = ObserverError::StaleEstimate {
        chain: alpha.chain,
        now,
    };
    let since = now.checked_sub(alpha.alpha_hat).ok_or(stale.clone())?;
    let deadline = (alpha.alpha_hat + params.period).checked_sub(now).ok_or(stale)?;
    Ok(match (obs.beta, obs.gamma) {
        (_, Some(gamma)) => StateEstimate {
            deadline,
            residue: Time::ZERO,
            delay: gamma.saturating_sub(alpha.alpha_hat),
        },
        (Some(beta), None) => StateEstimate {
            deadline,
            residue: params.sensor_done_residue() - now.saturating_sub(beta).min(params.control_prep),
            delay: since,
        },
        (None, None) => StateEstimate {
            deadline,
            residue: params.work() - since.min(params.sensor_prep),
            delay: since,
        },
    })
}

/// Estimated instantaneous schedulability, `r_hat <= d_hat`.
pub fn estimated_schedulable(d_hat: Time, r_hat: Time) -> bool {
    r_hat <= d_hat
}

/// The release a chain's own schedule places at or before `now`, counting
/// from its first arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NominalRelease {
    /// The first arrival is still ahead.
    Pending { first: Time },
    /// Latest release at or before `now`.
    Active {
        alpha: Time,
        instance: u64,
        params: ChainParams,
    },
    /// Dormant after `instance`; the next activation if any.
    Dormant { instance: Option<u64>, next: Option<Time> },
}

/// Next release of a chain after one at `alpha` with period `period`,
/// skipping dormant stretches.
pub fn next_release(spec: &MessageChainSpec, alpha: Time, period: Time) -> Option<Time> {
    let next = alpha + period;
    if spec.params_at(next).is_some() {
        Some(next)
    } else {
        spec.next_activation_after(next)
    }
}

/// Walks a chain's release grid from its first arrival up to `now`.
pub fn nominal_release(spec: &MessageChainSpec, now: Time) -> NominalRelease {
    if spec.first_arrival > now {
        return NominalRelease::Pending {
            first: spec.first_arrival,
        };
    }
    let mut at = spec.first_arrival;
    let mut instance: Option<u64> = None;
    loop {
        let Some(&p) = spec.params_at(at) else {
            match spec.next_activation_after(at) {
                Some(s) if s <= now => {
                    at = s;
                    continue;
                }
                next => return NominalRelease::Dormant { instance, next },
            }
        };
        let k = instance.map_or(0, |k| k + 1);
        instance = Some(k);
        let next = at + p.period;
        if next > now {
            return NominalRelease::Active {
                alpha: at,
                instance: k,
                params: p,
            };
        }
        at = next;
    }
}

/// What the observer believes about one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainEstimate {
    /// No sensor frame of this chain has been seen yet.
    Unknown,
    /// Between releases with no parameters in force.
    Dormant { instance: u64, deadline: Time },
    Known {
        instance: u64,
        alpha_hat: Time,
        params: ChainParams,
        state: StateEstimate,
    },
}

#[derive(Debug, Clone, Default)]
struct Track {
    alpha: Option<AlphaEstimate>,
    params: Option<ChainParams>,
    beta: Option<Time>,
    gamma: Option<Time>,
}

/// Per-node observer over every chain on the bus.
#[derive(Debug, Clone)]
pub struct Observer {
    specs: Vec<MessageChainSpec>,
    tracks: Vec<Track>,
    last_frame_end: Option<Time>,
}

impl Observer {
    pub fn new(specs: &[MessageChainSpec]) -> Self {
        Observer {
            specs: specs.to_vec(),
            tracks: vec![Track::default(); specs.len()],
            last_frame_end: None,
        }
    }

    fn spec(&self, chain: ChainId) -> Result<&MessageChainSpec, ObserverError> {
        self.specs.get(chain.index()).ok_or(ObserverError::UnknownChain(chain))
    }

    /// Feeds one bus event. Only receptions carry information; other kinds
    /// are ignored and `Ok(false)` is returned. The event's instance field is
    /// not used: instances are counted from receptions.
    pub fn observe(&mut self, event: &TimedEvent) -> Result<bool, ObserverError> {
        match event.kind {
            EventKind::SensorTxEnd => self.sensor_received(event.chain, event.at)?,
            EventKind::ControlTxEnd => self.control_received(event.chain, event.at)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn sensor_received(&mut self, chain: ChainId, beta: Time) -> Result<(), ObserverError> {
        let spec = self.spec(chain)?.clone();
        let track = &self.tracks[chain.index()];
        let mut estimate = match (track.alpha, track.params) {
            (Some(prev), Some(pp)) => {
                // Walk predicted releases; a release whose deadline has passed
                // by the reception cannot own it.
                let mut cur = prev;
                let mut period = pp.period;
                loop {
                    let next =
                        next_release(&spec, cur.alpha_hat, period).ok_or(ObserverError::NoRelease { chain, beta })?;
                    let np = *spec.params_at(next).ok_or(ObserverError::NoRelease { chain, beta })?;
                    if beta > next + np.period {
                        cur = AlphaEstimate {
                            chain,
                            instance: cur.instance + 1,
                            alpha_hat: next,
                            epsilon_bound: cur.epsilon_bound,
                        };
                        period = np.period;
                        continue;
                    }
                    break update_alpha(chain, Some((&cur, next - cur.alpha_hat)), beta, &np)?;
                }
            }
            _ => {
                let p = spec.nominal().ok_or(ObserverError::NoRelease { chain, beta })?;
                update_alpha(chain, None, beta, p)?
            }
        };
        let params = spec
            .params_at(estimate.alpha_hat)
            .or_else(|| spec.nominal())
            .copied()
            .ok_or(ObserverError::NoRelease { chain, beta })?;

        // An idle bus right before the frame started means the sensor
        // message was granted the moment it was ready.
        let start = beta - params.sensor_tx;
        if self.last_frame_end.is_none_or(|end| end < start) {
            estimate.epsilon_bound = Some(Time::ZERO);
        }

        self.tracks[chain.index()] = Track {
            alpha: Some(estimate),
            params: Some(params),
            beta: Some(beta),
            gamma: None,
        };
        self.last_frame_end = Some(beta);
        Ok(())
    }

    fn control_received(&mut self, chain: ChainId, gamma: Time) -> Result<(), ObserverError> {
        self.spec(chain)?;
        let track = &mut self.tracks[chain.index()];
        let (Some(beta), None, Some(p)) = (track.beta, track.gamma, track.params) else {
            return Err(ObserverError::OrphanControl { chain, gamma });
        };
        let earliest = beta + p.sensor_done_residue();
        if gamma < earliest {
            return Err(ObserverError::EarlyControl { chain, gamma, earliest });
        }
        track.gamma = Some(gamma);
        self.last_frame_end = Some(gamma);
        Ok(())
    }

    /// Latest release estimate of `chain`, if any sensor frame has been seen.
    pub fn alpha(&self, chain: ChainId) -> Option<&AlphaEstimate> {
        self.tracks.get(chain.index())?.alpha.as_ref()
    }

    /// Estimate at `now`. When the predicted next release has already passed,
    /// the estimate rolls forward to that release with nothing received yet.
    pub fn estimate(&self, chain: ChainId, now: Time) -> Result<ChainEstimate, ObserverError> {
        let spec = self.spec(chain)?;
        let track = &self.tracks[chain.index()];
        let (Some(mut alpha), Some(mut params)) = (track.alpha, track.params) else {
            return Ok(ChainEstimate::Unknown);
        };
        let mut obs = ObservedReception {
            chain,
            instance: alpha.instance,
            beta: track.beta,
            gamma: track.gamma,
        };
        while alpha.alpha_hat + params.period <= now {
            let after = alpha.alpha_hat + params.period;
            let next = match spec.params_at(after) {
                Some(_) => Some(after),
                None => spec.next_activation_after(after),
            };
            match next {
                Some(s) if s <= now => {
                    params = *spec.params_at(s).expect("activation has parameters");
                    alpha = AlphaEstimate {
                        chain,
                        instance: alpha.instance + 1,
                        alpha_hat: s,
                        epsilon_bound: alpha.epsilon_bound,
                    };
                    obs = ObservedReception {
                        chain,
                        instance: alpha.instance,
                        beta: None,
                        gamma: None,
                    };
                }
                other => {
                    return Ok(ChainEstimate::Dormant {
                        instance: alpha.instance,
                        deadline: other.map_or(Time::NEVER, |s| s - now),
                    })
                }
            }
        }
        let state = estimate_states(now, &alpha, &obs, &params)?;
        Ok(ChainEstimate::Known {
            instance: alpha.instance,
            alpha_hat: alpha.alpha_hat,
            params,
            state,
        })
    }

    /// Estimated bus state at a reception instant `now`, before arbitration.
    /// Chains never observed so far are placed on their own release grid.
    pub fn estimated_bus(&self, now: Time) -> Result<BusState, ObserverError> {
        let mut chains = Vec::with_capacity(self.specs.len());
        for spec in &self.specs {
            let st = match self.estimate(spec.id, now)? {
                ChainEstimate::Known {
                    instance,
                    params,
                    state,
                    ..
                } => ChainState {
                    deadline: state.deadline,
                    residue: state.residue,
                    delay: state.delay,
                    instance: Some(instance),
                    active: Some(params),
                },
                ChainEstimate::Dormant { instance, deadline } => ChainState {
                    deadline,
                    residue: Time::ZERO,
                    delay: Time::ZERO,
                    instance: Some(instance),
                    active: None,
                },
                ChainEstimate::Unknown => nominal_state(spec, now),
            };
            chains.push(st);
        }
        Ok(BusState { now, chains, bus: None })
    }
}

fn nominal_state(spec: &MessageChainSpec, now: Time) -> ChainState {
    match nominal_release(spec, now) {
        NominalRelease::Pending { first } => ChainState::waiting_for_arrival(first - now),
        NominalRelease::Active {
            alpha,
            instance,
            params,
        } => {
            let since = now - alpha;
            ChainState {
                deadline: alpha + params.period - now,
                residue: params.work() - since.min(params.sensor_prep),
                delay: since,
                instance: Some(instance),
                active: Some(params),
            }
        }
        NominalRelease::Dormant { instance, next } => ChainState {
            deadline: next.map_or(Time::NEVER, |s| s - now),
            residue: Time::ZERO,
            delay: Time::ZERO,
            instance,
            active: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{Priority, Segment};

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

    #[test]
    fn first_release_from_unblocked_sensor() {
        let a = update_alpha(ChainId(1), None, Time(4), &params()).unwrap();
        assert_eq!(a.alpha_hat, Time(0));
    }

    #[test]
    fn first_release_from_blocked_sensor() {
        let a = update_alpha(ChainId(1), None, Time(7), &params()).unwrap();
        assert_eq!(a.alpha_hat, Time(3));
    }

    #[test]
    fn error_shrinks_once_the_period_bound_wins() {
        let a0 = update_alpha(ChainId(1), None, Time(7), &params()).unwrap();
        let a1 = update_alpha(ChainId(1), Some((&a0, Time(20))), Time(24), &params()).unwrap();
        assert_eq!(a1.alpha_hat, Time(20));
        assert_eq!(a1.instance, 1);
    }

    #[test]
    fn reception_before_minimum_latency_is_malformed() {
        let err = update_alpha(ChainId(1), None, Time(3), &params()).unwrap_err();
        assert!(matches!(err, ObserverError::MalformedObservation { .. }));
    }

    fn obs(beta: Option<u64>, gamma: Option<u64>) -> ObservedReception {
        ObservedReception {
            chain: ChainId(1),
            instance: 0,
            beta: beta.map(Time),
            gamma: gamma.map(Time),
        }
    }

    fn alpha0() -> AlphaEstimate {
        AlphaEstimate {
            chain: ChainId(1),
            instance: 0,
            alpha_hat: Time(0),
            epsilon_bound: None,
        }
    }

    #[test]
    fn residue_after_sensor_reception() {
        let s = estimate_states(Time(5), &alpha0(), &obs(Some(4), None), &params()).unwrap();
        assert_eq!(s.residue, Time(4));
        assert_eq!(s.deadline, Time(15));
        assert_eq!(s.delay, Time(5));
    }

    #[test]
    fn residue_after_control_reception() {
        let s = estimate_states(Time(12), &alpha0(), &obs(Some(4), Some(9)), &params()).unwrap();
        assert_eq!((s.residue, s.delay), (Time(0), Time(9)));
    }

    #[test]
    fn residue_at_estimated_release() {
        let s = estimate_states(Time(0), &alpha0(), &obs(None, None), &params()).unwrap();
        assert_eq!((s.residue, s.delay), (Time(9), Time(0)));
    }

    #[test]
    fn past_deadline_is_stale() {
        let err = estimate_states(Time(21), &alpha0(), &obs(None, None), &params()).unwrap_err();
        assert!(matches!(err, ObserverError::StaleEstimate { .. }));
    }

    #[test]
    fn schedulability_on_estimates() {
        assert!(estimated_schedulable(Time(15), Time(4)));
        assert!(!estimated_schedulable(Time(2), Time(9)));
    }

    fn ev(at: u64, kind: EventKind) -> TimedEvent {
        TimedEvent {
            at: Time(at),
            kind,
            chain: ChainId(1),
            instance: 99,
        }
    }

    #[test]
    fn observer_tracks_a_lone_chain() {
        let spec = MessageChainSpec::periodic(ChainId(1), params());
        let mut o = Observer::new(&[spec]);
        assert_eq!(o.estimate(ChainId(1), Time(2)).unwrap(), ChainEstimate::Unknown);
        assert!(!o.observe(&ev(0, EventKind::Arrival)).unwrap());
        assert!(o.observe(&ev(4, EventKind::SensorTxEnd)).unwrap());
        let a = *o.alpha(ChainId(1)).unwrap();
        assert_eq!((a.instance, a.alpha_hat, a.epsilon_bound), (0, Time(0), Some(Time(0))));
        o.observe(&ev(9, EventKind::ControlTxEnd)).unwrap();
        match o.estimate(ChainId(1), Time(9)).unwrap() {
            ChainEstimate::Known { state, .. } => {
                assert_eq!(
                    (state.deadline, state.residue, state.delay),
                    (Time(11), Time(0), Time(9))
                )
            }
            other => panic!("{other:?}"),
        }
        // Rolled forward past the next release.
        match o.estimate(ChainId(1), Time(21)).unwrap() {
            ChainEstimate::Known {
                instance,
                alpha_hat,
                state,
                ..
            } => {
                assert_eq!((instance, alpha_hat), (1, Time(20)));
                assert_eq!(
                    (state.deadline, state.residue, state.delay),
                    (Time(19), Time(8), Time(1))
                );
            }
            other => panic!("{other:?}"),
        }
        o.observe(&ev(24, EventKind::SensorTxEnd)).unwrap();
        assert_eq!(o.alpha(ChainId(1)).unwrap().instance, 1);
    }

    #[test]
    fn control_without_sensor_is_orphaned() {
        let spec = MessageChainSpec::periodic(ChainId(1), params());
        let mut o = Observer::new(&[spec]);
        let err = o.observe(&ev(9, EventKind::ControlTxEnd)).unwrap_err();
        assert!(matches!(err, ObserverError::OrphanControl { .. }));
        o.observe(&ev(4, EventKind::SensorTxEnd)).unwrap();
        let err = o.observe(&ev(6, EventKind::ControlTxEnd)).unwrap_err();
        assert!(matches!(err, ObserverError::EarlyControl { .. }));
    }

    #[test]
    fn skipped_instance_is_counted() {
        let spec = MessageChainSpec::periodic(ChainId(1), params());
        let mut o = Observer::new(&[spec]);
        o.observe(&ev(4, EventKind::SensorTxEnd)).unwrap();
        o.observe(&ev(9, EventKind::ControlTxEnd)).unwrap();
        // Instance 1 never reached the bus; this frame belongs to instance 2.
        o.observe(&ev(44, EventKind::SensorTxEnd)).unwrap();
        let a = o.alpha(ChainId(1)).unwrap();
        assert_eq!((a.instance, a.alpha_hat), (2, Time(40)));
    }

    #[test]
    fn nominal_grid_walks_dormant_stretches() {
        let p = params();
        let spec = MessageChainSpec {
            id: ChainId(1),
            first_arrival: Time(10),
            segments: vec![
                Segment {
                    start: Time(10),
                    params: Some(p),
                },
                Segment {
                    start: Time(45),
                    params: None,
                },
                Segment {
                    start: Time(100),
                    params: Some(p),
                },
            ],
        };
        assert_eq!(
            nominal_release(&spec, Time(5)),
            NominalRelease::Pending { first: Time(10) }
        );
        assert_eq!(
            nominal_release(&spec, Time(35)),
            NominalRelease::Active {
                alpha: Time(30),
                instance: 1,
                params: p
            }
        );
        assert_eq!(
            nominal_release(&spec, Time(60)),
            NominalRelease::Dormant {
                instance: Some(1),
                next: Some(Time(100))
            }
        );
        assert_eq!(
            nominal_release(&spec, Time(100)),
            NominalRelease::Active {
                alpha: Time(100),
                instance: 2,
                params: p
            }
        );
    }
}
