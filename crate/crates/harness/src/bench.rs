//! Wall-clock comparison of the two bus engines.

use std::time::{Duration, Instant};

use cantiming::{simulate_hybrid, simulate_oracle, BusState, MessageChainSpec, Time};

use crate::HarnessError;

/// Each repetition repeats the engine until this much time has passed, so
/// sub-millisecond runs are timed over many calls.
const MIN_SAMPLE: Duration = Duration::from_millis(20);

fn per_call<F: FnMut()>(mut f: F) -> Duration {
    let start = Instant::now();
    let mut calls = 0u32;
    loop {
        f();
        calls += 1;
        let spent = start.elapsed();
        if spent >= MIN_SAMPLE {
            return spent / calls;
        }
    }
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineBench {
    pub horizon: Time,
    pub hybrid: Duration,
    pub oracle: Duration,
    pub events: usize,
}

impl EngineBench {
    /// Oracle time over hybrid time; `None` for an empty horizon.
    pub fn speedup(&self) -> Option<f64> {
        (self.horizon > Time::ZERO && !self.hybrid.is_zero())
            .then(|| self.oracle.as_secs_f64() / self.hybrid.as_secs_f64())
    }
}

/// Median per-run times of both engines over `[0, horizon]`.
pub fn bench_engines(specs: &[MessageChainSpec], horizon: Time, reps: usize) -> Result<EngineBench, HarnessError> {
    let start = BusState::initial(specs, Time::ZERO)?;
    let (_, trace) = simulate_hybrid(specs, &start, horizon)?;
    let reps = reps.max(1);
    let mut hybrid = Vec::with_capacity(reps);
    let mut oracle = Vec::with_capacity(reps);
    for _ in 0..reps {
        hybrid.push(per_call(|| {
            std::hint::black_box(simulate_hybrid(specs, &start, horizon).expect("validated above"));
        }));
        oracle.push(per_call(|| {
            std::hint::black_box(simulate_oracle(specs, horizon));
        }));
    }
    Ok(EngineBench {
        horizon,
        hybrid: median(hybrid),
        oracle: median(oracle),
        events: trace.len(),
    })
}

/// Timings at `horizon` and at twice `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub base: EngineBench,
    pub doubled: EngineBench,
}

impl Scaling {
    /// Doubled-horizon time over base time, hybrid then oracle.
    pub fn ratios(&self) -> Option<(f64, f64)> {
        (self.base.horizon > Time::ZERO).then(|| {
            (
                self.doubled.hybrid.as_secs_f64() / self.base.hybrid.as_secs_f64(),
                self.doubled.oracle.as_secs_f64() / self.base.oracle.as_secs_f64(),
            )
        })
    }
}

pub fn bench_scaling(specs: &[MessageChainSpec], horizon: Time, reps: usize) -> Result<Scaling, HarnessError> {
    Ok(Scaling {
        base: bench_engines(specs, horizon, reps)?,
        doubled: bench_engines(specs, horizon + horizon, reps)?,
    })
}
