//! Closed-loop co-simulation: plants, bus, observer and MPC controllers.
//!
//! Frame timing does not depend on the control values, so the bus trace is
//! computed first and then replayed event by event. At each arrival the
//! loop's plant is sampled; at each sensor reception the controller updates
//! the observer, plans against the predicted delays and queues its first
//! move; at each control reception the actuator applies it and holds it.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use cantiming::mpc::{
    apply_first_move, cell_cost, delay_schedule, predict_delays, solve_mpc, PredictedInstance, Propagator, Reference,
};
use cantiming::{
    diff_traces, simulate_hybrid, simulate_oracle, window_check, worst_case_delay, BusState, ChainId, EventKind,
    EventTrace, MpcError, Observer, Quantum, SchedVerdict, Time,
};
use nalgebra::{DMatrix, DVector};

use crate::config::{ControlLoop, Scenario, Strategy};
use crate::HarnessError;

/// Timing of one instance of a control loop.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRow {
    pub k: u64,
    pub alpha: Time,
    pub beta: Option<Time>,
    pub gamma: Option<Time>,
    /// Delay the controller planned with for this instance, counted from
    /// its release estimate.
    pub predicted: Option<Time>,
    pub alpha_hat: Option<Time>,
    pub missed: bool,
}

impl InstanceRow {
    pub fn delta(&self) -> Option<Time> {
        self.gamma.map(|g| g - self.alpha)
    }

    /// `alpha_hat - alpha` in ticks.
    pub fn epsilon(&self) -> Option<i64> {
        self.alpha_hat.map(|a| a.signed_diff(self.alpha))
    }
}

/// Plant output, reference and applied input at one sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRow {
    pub t: Time,
    pub y: DVector<f64>,
    pub lambda: DVector<f64>,
    pub u: DVector<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub solves: u32,
    pub unconverged: u32,
    /// Plans made with the constant worst-case schedule because the
    /// prediction could not be made.
    pub fallbacks: u32,
    /// Sensor receptions after which the input was simply held.
    pub skipped: u32,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopReport {
    pub chain: ChainId,
    /// Tracking cost integrated over the whole run.
    pub cost: f64,
    pub worst_case_delay: Option<Time>,
    pub instances: Vec<InstanceRow>,
    pub signals: Vec<SignalRow>,
    /// `(gamma, k)` of every applied move.
    pub actuations: Vec<(Time, u64)>,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineTimings {
    pub hybrid: Duration,
    pub oracle: Duration,
    /// The tick-level replay produced the same trace.
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub strategy: Strategy,
    pub quantum: Quantum,
    pub horizon: Time,
    pub trace: EventTrace,
    pub verdict: SchedVerdict,
    pub loops: Vec<LoopReport>,
    pub timings: EngineTimings,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn deadline_misses(&self) -> usize {
        self.trace.deadline_misses().count()
    }
}

/// Exact plant evolution under a held input, with the running cost and the
/// 1 ms signal log.
struct LoopSim<'a> {
    prop: Propagator<'a>,
    q1: &'a DMatrix<f64>,
    q2: &'a DMatrix<f64>,
    reference: &'a Reference,
    quantum: Quantum,
    step: Time,
    x: DVector<f64>,
    u: DVector<f64>,
    t: Time,
    next_sample: Time,
    cost: f64,
    signals: Vec<SignalRow>,
}

impl<'a> LoopSim<'a> {
    fn new(lp: &'a ControlLoop, quantum: Quantum, step: Time) -> Self {
        LoopSim {
            prop: Propagator::new(&lp.plant),
            q1: &lp.problem.q1,
            q2: &lp.problem.q2,
            reference: &lp.problem.reference,
            quantum,
            step,
            x: lp.x0.clone(),
            u: DVector::zeros(lp.plant.inputs()),
            t: Time::ZERO,
            next_sample: Time::ZERO,
            cost: 0.0,
            signals: Vec::new(),
        }
    }

    fn record(&mut self) {
        let secs = self.quantum.to_secs(self.t);
        let plant = self.prop.plant();
        self.signals.push(SignalRow {
            t: self.t,
            y: plant.output(&self.x),
            lambda: self.reference.value(secs, plant.outputs()),
            u: self.u.clone(),
        });
        self.next_sample += self.step;
    }

    /// Integrates up to `until`. A sample at instant `t` is logged when the
    /// plant leaves `t`, so it shows the input applied at `t`.
    fn advance_to(&mut self, until: Time) -> Result<(), MpcError> {
        while self.t < until {
            if self.t == self.next_sample {
                self.record();
            }
            let stop = until.min(self.next_sample);
            let (a, b) = (self.quantum.to_secs(self.t), self.quantum.to_secs(stop));
            let mut cuts = vec![a];
            cuts.extend(self.reference.breakpoints(a, b));
            cuts.push(b);
            for w in cuts.windows(2) {
                self.cost += cell_cost(
                    &mut self.prop,
                    self.q1,
                    self.q2,
                    self.reference,
                    &self.x,
                    &self.u,
                    w[0],
                    w[1],
                )?;
                self.x = self.prop.step(&self.x, &self.u, w[1] - w[0])?;
            }
            self.t = stop;
        }
        Ok(())
    }

    fn finish(&mut self, horizon: Time) -> Result<(), MpcError> {
        self.advance_to(horizon)?;
        if self.t == self.next_sample {
            self.record();
        }
        Ok(())
    }
}

struct LoopState<'a> {
    lp: &'a ControlLoop,
    sim: LoopSim<'a>,
    samples: HashMap<u64, DVector<f64>>,
    pending: Option<(u64, DVector<f64>)>,
    rows: BTreeMap<u64, InstanceRow>,
    actuations: Vec<(Time, u64)>,
    wc: Option<Time>,
    stats: SolveStats,
}

/// Constant-delay plan: releases every nominal period from `alpha_hat`,
/// each completing `delay` later.
fn worst_case_plan(sc: &Scenario, lp: &ControlLoop, alpha_hat: Time, delay: Time) -> Vec<PredictedInstance> {
    let spec = &sc.specs[lp.chain.index()];
    let period = spec
        .segments
        .iter()
        .find_map(|s| s.params)
        .map(|p| p.period)
        .unwrap_or(lp.mpc_horizon);
    let end = alpha_hat + lp.mpc_horizon;
    let mut out = Vec::new();
    let mut alpha = alpha_hat;
    let mut j = 0;
    while alpha < end {
        out.push(PredictedInstance {
            instance: j,
            alpha,
            delay,
            exact: false,
        });
        alpha += period;
        j += 1;
    }
    out
}

fn no_contention_work(sc: &Scenario, chain: ChainId, at: Time) -> Time {
    sc.specs[chain.index()]
        .params_at(at)
        .or_else(|| sc.specs[chain.index()].segments.iter().find_map(|s| s.params.as_ref()))
        .map_or(Time::ZERO, |p| p.work())
}

/// Runs the scenario under `strategy` over its whole horizon.
pub fn run_closed_loop(sc: &Scenario, strategy: Strategy) -> Result<RunReport, HarnessError> {
    let start = BusState::initial(&sc.specs, Time::ZERO)?;
    let clock = Instant::now();
    let (_, trace) = simulate_hybrid(&sc.specs, &start, sc.horizon)?;
    let hybrid_time = clock.elapsed();
    let clock = Instant::now();
    let oracle = simulate_oracle(&sc.specs, sc.horizon);
    let oracle_time = clock.elapsed();
    let timings = EngineTimings {
        hybrid: hybrid_time,
        oracle: oracle_time,
        agree: diff_traces(&trace, &oracle).is_empty(),
    };
    let verdict = window_check(&sc.specs, &start, sc.horizon)?;

    let mut notes = Vec::new();
    let mut loops: Vec<LoopState> = Vec::with_capacity(sc.loops.len());
    for lp in &sc.loops {
        let wc = match worst_case_delay(&sc.specs, lp.chain, sc.probe) {
            Ok(d) => Some(d),
            Err(e) => {
                if strategy == Strategy::WorstCase {
                    return Err(e.into());
                }
                notes.push(format!("chain {}: no worst-case baseline ({e})", lp.chain));
                None
            }
        };
        loops.push(LoopState {
            lp,
            sim: LoopSim::new(lp, sc.quantum, sc.millisecond()),
            samples: HashMap::new(),
            pending: None,
            rows: BTreeMap::new(),
            actuations: Vec::new(),
            wc,
            stats: SolveStats::default(),
        });
    }
    let index: HashMap<ChainId, usize> = sc.loops.iter().enumerate().map(|(i, l)| (l.chain, i)).collect();

    let mut obs = Observer::new(&sc.specs);
    for e in trace.iter() {
        if let Err(err) = obs.observe(e) {
            notes.push(format!(
                "t={} chain {}: observer rejected {} ({err})",
                e.at, e.chain, e.kind
            ));
        }
        let Some(&li) = index.get(&e.chain) else {
            continue;
        };
        let ls = &mut loops[li];
        match e.kind {
            EventKind::Arrival => {
                ls.sim.advance_to(e.at)?;
                ls.samples.insert(e.instance, ls.sim.x.clone());
                ls.rows.insert(
                    e.instance,
                    InstanceRow {
                        k: e.instance,
                        alpha: e.at,
                        beta: None,
                        gamma: None,
                        predicted: None,
                        alpha_hat: None,
                        missed: false,
                    },
                );
            }
            EventKind::SensorTxEnd => {
                if let Some(r) = ls.rows.get_mut(&e.instance) {
                    r.beta = Some(e.at);
                }
                plan(sc, strategy, &obs, ls, e.instance, e.at, &mut notes)?;
            }
            EventKind::ControlTxEnd => {
                if let Some(r) = ls.rows.get_mut(&e.instance) {
                    r.gamma = Some(e.at);
                }
                ls.sim.advance_to(e.at)?;
                if let Some((k, u)) = ls.pending.take() {
                    if k == e.instance {
                        ls.sim.u = u;
                        ls.actuations.push((e.at, k));
                    } else {
                        ls.pending = Some((k, u));
                    }
                }
            }
            EventKind::DeadlineMiss => {
                if let Some(r) = ls.rows.get_mut(&e.instance) {
                    r.missed = true;
                }
                if ls.pending.as_ref().is_some_and(|(k, _)| *k == e.instance) {
                    ls.pending = None;
                }
                notes.push(format!(
                    "t={} chain {}: instance {} missed its deadline",
                    e.at, e.chain, e.instance
                ));
            }
            _ => {}
        }
    }

    let mut reports = Vec::with_capacity(loops.len());
    for mut ls in loops {
        ls.sim.finish(sc.horizon)?;
        reports.push(LoopReport {
            chain: ls.lp.chain,
            cost: ls.sim.cost,
            worst_case_delay: ls.wc,
            instances: ls.rows.into_values().collect(),
            signals: ls.sim.signals,
            actuations: ls.actuations,
            stats: ls.stats,
        });
    }
    Ok(RunReport {
        strategy,
        quantum: sc.quantum,
        horizon: sc.horizon,
        trace,
        verdict,
        loops: reports,
        timings,
        notes,
    })
}

/// Controller work on the sensor reception of instance `k` at `beta`.
fn plan(
    sc: &Scenario,
    strategy: Strategy,
    obs: &Observer,
    ls: &mut LoopState<'_>,
    k: u64,
    beta: Time,
    notes: &mut Vec<String>,
) -> Result<(), HarnessError> {
    let lp = ls.lp;
    let chain = lp.chain;
    let Some(x0) = ls.samples.remove(&k) else {
        ls.stats.skipped += 1;
        return Ok(());
    };
    ls.samples.retain(|&j, _| j > k);
    let Some(alpha_hat) = obs.alpha(chain).map(|a| a.alpha_hat) else {
        notes.push(format!("t={beta} chain {chain}: no release estimate, input held"));
        ls.stats.skipped += 1;
        return Ok(());
    };
    let fallback_delay = ls.wc.unwrap_or_else(|| no_contention_work(sc, chain, alpha_hat));
    let predicted = match strategy {
        Strategy::WorstCase => worst_case_plan(sc, lp, alpha_hat, fallback_delay),
        Strategy::TimingModel => {
            let attempt = obs.estimated_bus(beta).map_err(|e| e.to_string()).and_then(|est| {
                predict_delays(&sc.specs, &est, chain, alpha_hat, lp.mpc_horizon).map_err(|e| e.to_string())
            });
            match attempt {
                Ok(p) => p,
                Err(why) => {
                    notes.push(format!(
                        "t={beta} chain {chain}: prediction failed ({why}), worst-case schedule used"
                    ));
                    ls.stats.fallbacks += 1;
                    worst_case_plan(sc, lp, alpha_hat, fallback_delay)
                }
            }
        }
    };
    if let Some(r) = ls.rows.get_mut(&k) {
        r.alpha_hat = Some(alpha_hat);
        r.predicted = predicted.first().filter(|p| p.alpha == alpha_hat).map(|p| p.delay);
    }
    let schedule = delay_schedule(&predicted, sc.quantum, alpha_hat, lp.mpc_horizon);
    let held = ls.sim.u.clone();
    match solve_mpc(&lp.plant, &lp.problem, &x0, &held, &schedule) {
        Ok(sol) => {
            ls.stats.solves += 1;
            if !sol.converged {
                ls.stats.unconverged += 1;
            }
            ls.stats.max_residual = ls.stats.max_residual.max(sol.residual);
            let first = apply_first_move(&sol.policy, &schedule)?;
            ls.pending = Some((k, first.value));
        }
        Err(e) => {
            notes.push(format!("t={beta} chain {chain}: no plan ({e}), input held"));
            ls.stats.skipped += 1;
        }
    }
    Ok(())
}
