use cantiming::event::EventKind;
use cantiming::testkit::{random_chains, MS};
use cantiming::{simulate_oracle, window_check, BusState, MessageChainSpec, Time};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const UNTIL: Time = Time(1_000 * MS);

fn oracle_misses(specs: &[MessageChainSpec], until: Time) -> bool {
    let longest = specs
        .iter()
        .flat_map(|s| s.segments.iter().filter_map(|g| g.params))
        .map(|p| p.period)
        .max()
        .unwrap_or(Time::ZERO);
    let trace = simulate_oracle(specs, until + longest);
    let missed = trace.deadline_misses().any(|m| {
        trace
            .iter()
            .any(|a| a.kind == EventKind::Arrival && a.chain == m.chain && a.instance == m.instance && a.at <= until)
    });
    missed
}

fn verdict(specs: &[MessageChainSpec]) -> bool {
    let start = BusState::initial(specs, Time::ZERO).unwrap();
    window_check(specs, &start, UNTIL).unwrap().schedulable
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn window_check_agrees_with_oracle(seed in any::<u64>()) {
        let specs = random_chains(&mut ChaCha8Rng::seed_from_u64(seed), 5);
        let start = BusState::initial(&specs, Time::ZERO).unwrap();
        let v = window_check(&specs, &start, UNTIL).unwrap();
        prop_assert_eq!(v.schedulable, !oracle_misses(&specs, UNTIL));
        prop_assert_eq!(v.schedulable, v.first_violation.is_none());
        prop_assert_eq!(v.schedulable, v.margin >= 0);
    }
}

/// A heuristic, not a theorem: non-preemptive buses admit timing anomalies in
/// principle. None occur in this fixed family.
#[test]
fn heavier_load_keeps_a_failing_set_failing() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    let mut anomalies = Vec::new();
    for seed in 0..400u64 {
        let specs = random_chains(&mut ChaCha8Rng::seed_from_u64(seed), 5);
        if verdict(&specs) {
            continue;
        }
        let mut heavier = specs.clone();
        let chain = rng.random_range(0..heavier.len());
        for seg in &mut heavier[chain].segments {
            let Some(p) = &mut seg.params else { continue };
            match rng.random_range(0..5) {
                0 => p.sensor_prep += Time(MS),
                1 => p.sensor_tx += Time(MS),
                2 if p.control_tx > Time::ZERO => p.control_prep += Time(MS),
                3 if p.control_tx > Time::ZERO => p.control_tx += Time(MS),
                _ => p.period = Time(p.period.0 * 9 / 10).max(Time(1)),
            }
        }
        checked += 1;
        if verdict(&heavier) {
            anomalies.push(seed);
        }
    }
    assert!(checked > 100);
    assert!(anomalies.is_empty(), "heavier sets passed: {anomalies:?}");
}
