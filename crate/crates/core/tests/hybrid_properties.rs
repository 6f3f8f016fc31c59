use std::collections::HashMap;

use cantiming::event::EventKind;
use cantiming::hybrid::{apply_jumps, simulate_hybrid_with, Cause};
use cantiming::testkit::{random_chains, MS};
use cantiming::{simulate_hybrid, BusState, ChainId, EventTrace, MessageChainSpec, Time};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const HORIZON: Time = Time(1_000 * MS);

fn specs(seed: u64) -> Vec<MessageChainSpec> {
    random_chains(&mut ChaCha8Rng::seed_from_u64(seed), 5)
}

fn run(specs: &[MessageChainSpec]) -> (Vec<(BusState, Vec<Cause>)>, EventTrace) {
    let start = BusState::initial(specs, Time::ZERO).unwrap();
    let mut moments = Vec::new();
    let (_, trace) = simulate_hybrid_with(specs, &start, HORIZON, |bus, causes| {
        moments.push((bus.clone(), causes.to_vec()));
    })
    .unwrap();
    (moments, trace)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deterministic(seed in any::<u64>()) {
        let specs = specs(seed);
        let start = BusState::initial(&specs, Time::ZERO).unwrap();
        let a = simulate_hybrid(&specs, &start, HORIZON).unwrap();
        let b = simulate_hybrid(&specs, &start, HORIZON).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn one_frame_at_a_time(seed in any::<u64>()) {
        let specs = specs(seed);
        let (moments, trace) = run(&specs);
        for (bus, causes) in &moments {
            let (after, _) = apply_jumps(bus, causes, &specs).unwrap();
            prop_assert!(after.check_invariants().is_ok());
        }
        let mut owner: Option<ChainId> = None;
        for e in &trace {
            match e.kind {
                EventKind::BusGrant(_) => {
                    prop_assert!(owner.is_none(), "grant to {} while {:?} transmits", e.chain, owner);
                    owner = Some(e.chain);
                }
                EventKind::SensorTxEnd | EventKind::ControlTxEnd | EventKind::DeadlineMiss
                    if owner == Some(e.chain) =>
                {
                    owner = None;
                }
                _ => {}
            }
        }
    }

    #[test]
    fn flow_rates_and_residue_conservation(seed in any::<u64>()) {
        let specs = specs(seed);
        let (moments, trace) = run(&specs);
        let mut consumed: HashMap<(ChainId, u64), u64> = HashMap::new();
        for pair in moments.windows(2) {
            let (left, causes) = &pair[0];
            let (next, _) = &pair[1];
            let (post, _) = apply_jumps(left, causes, &specs).unwrap();
            let s = next.now - post.now;
            for (i, (a, b)) in post.chains.iter().zip(&next.chains).enumerate() {
                if !a.deadline.is_never() {
                    prop_assert_eq!(a.deadline - b.deadline, s);
                }
                prop_assert!(b.residue <= a.residue);
                prop_assert!(b.delay >= a.delay);
                prop_assert_eq!(b.delay > a.delay, a.residue > Time::ZERO && s > Time::ZERO);
                if let Some(k) = a.instance {
                    *consumed.entry((ChainId::from_index(i), k)).or_default() += (a.residue - b.residue).0;
                }
            }
        }
        // Instances released inside the run and completed within it used up
        // exactly their work; a release's own jump contributes nothing.
        for spec in &specs {
            for row in trace.instances(spec.id) {
                if row.missed || row.gamma.is_none() {
                    continue;
                }
                let work = spec.params_at(row.alpha).unwrap().work().0;
                prop_assert_eq!(consumed.get(&(spec.id, row.instance)).copied().unwrap_or(0), work);
            }
        }
    }

    #[test]
    fn receptions_follow_release(seed in any::<u64>()) {
        let specs = specs(seed);
        let (_, trace) = run(&specs);
        for spec in &specs {
            for row in trace.instances(spec.id) {
                let p = spec.params_at(row.alpha).unwrap();
                if let Some(b) = row.beta {
                    prop_assert!(row.alpha < b);
                    if let Some(g) = row.gamma {
                        let ordered = if p.control_tx > Time::ZERO { b < g } else { b == g };
                        prop_assert!(ordered);
                        prop_assert!(g - row.alpha >= p.work());
                    }
                }
            }
        }
    }
}
