use cantiming::testkit::{random_chains, MS};
use cantiming::{diff_traces, simulate_hybrid, simulate_oracle, BusState, Time};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hybrid_matches_oracle(seed in any::<u64>(), horizon_ms in 1u64..=1_000) {
        let specs = random_chains(&mut ChaCha8Rng::seed_from_u64(seed), 5);
        let until = Time(horizon_ms * MS);
        let start = BusState::initial(&specs, Time::ZERO).unwrap();
        let (_, hybrid) = simulate_hybrid(&specs, &start, until).unwrap();
        let oracle = simulate_oracle(&specs, until);
        let diff = diff_traces(&hybrid, &oracle);
        prop_assert!(diff.is_empty(), "{} discrepancies, first: {}", diff.len(), diff[0]);
    }
}

#[test]
fn general_purpose_chain_matches_oracle() {
    use cantiming::{ChainId, ChainParams, MessageChainSpec, Priority};
    let gp = ChainParams {
        period: Time(40),
        sensor_prep: Time(0),
        sensor_tx: Time(5),
        control_prep: Time(0),
        control_tx: Time(0),
        sensor_priority: Priority(1),
        control_priority: Priority(9),
    };
    let loop_ = ChainParams {
        period: Time(20),
        sensor_prep: Time(1),
        sensor_tx: Time(3),
        control_prep: Time(2),
        control_tx: Time(3),
        sensor_priority: Priority(2),
        control_priority: Priority(3),
    };
    let specs = [
        MessageChainSpec::periodic(ChainId(1), gp),
        MessageChainSpec::periodic(ChainId(2), loop_),
    ];
    let start = BusState::initial(&specs, Time::ZERO).unwrap();
    let (_, hybrid) = simulate_hybrid(&specs, &start, Time(400)).unwrap();
    assert!(diff_traces(&hybrid, &simulate_oracle(&specs, Time(400))).is_empty());
    assert_eq!(hybrid.delays(ChainId(1))[0], Time(5));
    assert_eq!(hybrid.delays(ChainId(2))[0], Time(13));
}
