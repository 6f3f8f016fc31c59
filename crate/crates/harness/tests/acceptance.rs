//! Exit criteria. Each test prints one PASS/FAIL line to the real stdout
//! (bypassing the test harness capture) before asserting.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use cantiming::mpc::{cost_gradient, solve_mpc, DelaySchedule, MpcProblem, PlantModel, Reference, SolverOptions};
use cantiming::testkit::{audit_observer, family_member, random_mpc_instance, random_policy, MS};
use cantiming::{
    diff_traces, simulate_hybrid, simulate_oracle, window_check, BusState, ChainId, EventKind, MessageChainSpec, Time,
};
use cantiming_harness::{bench_scaling, compare_strategies, load_scenario, Scenario};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Criteria run one at a time so the timed ones are not disturbed.
static SERIAL: Mutex<()> = Mutex::new(());

const FAMILY: u64 = 200;
const FAMILY_HORIZON: Time = Time(1_000 * MS);

fn verdict(name: &str, ok: bool, detail: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "\n{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    let _ = out.flush();
    assert!(ok, "{name}: {detail}");
}

fn golden() -> Scenario {
    load_scenario(&common::scenario_path("paper_sec6.json")).unwrap()
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn ms_list(ts: &[Time]) -> Vec<u64> {
    ts.iter().map(|t| t.0 / MS).collect()
}

#[test]
fn reference_delays() {
    let _g = serial();
    let sc = golden();
    let start = BusState::initial(&sc.specs, Time::ZERO).unwrap();
    let clock = Instant::now();
    let (_, trace) = simulate_hybrid(&sc.specs, &start, Time(200 * MS)).unwrap();
    let took = clock.elapsed();
    let oracle = simulate_oracle(&sc.specs, Time(200 * MS));
    let pinned = ms_list(&oracle.delays(ChainId(3)))[2];
    let want: [Vec<u64>; 3] = [vec![10, 9, 10, 10], vec![13, 9, 13, 11], vec![21, 13, pinned, 21]];
    let got: Vec<Vec<u64>> = (1..=3)
        .map(|c| ms_list(&trace.delays(ChainId(c))).into_iter().take(4).collect())
        .collect();
    let ok = got.iter().zip(&want).all(|(g, w)| g == w) && took < Duration::from_secs(1);
    verdict(
        "reference_delays",
        ok,
        format!("delays {got:?} (chain 3 k=3 pinned to oracle {pinned}), {took:?}"),
    );
}

#[test]
fn chain3_event_times() {
    let _g = serial();
    let sc = golden();
    let start = BusState::initial(&sc.specs, Time::ZERO).unwrap();
    let (_, trace) = simulate_hybrid(&sc.specs, &start, Time(160 * MS)).unwrap();
    let at = |kind| -> Vec<u64> {
        trace
            .iter()
            .filter(|e| e.chain == ChainId(3) && e.kind == kind)
            .map(|e| e.at.0 / MS)
            .take(4)
            .collect()
    };
    let (arrivals, done) = (at(EventKind::Arrival), at(EventKind::ControlTxEnd));
    let ok = arrivals == [0, 40, 80, 120] && done == [21, 53, 92, 141];
    verdict(
        "chain3_event_times",
        ok,
        format!("chain 3 arrivals {arrivals:?}, control completions {done:?}"),
    );
}

#[test]
fn oracle_equivalence() {
    let _g = serial();
    let clock = Instant::now();
    let mut bad = Vec::new();
    for seed in 0..FAMILY {
        let specs = family_member(seed);
        let start = BusState::initial(&specs, Time::ZERO).unwrap();
        let (_, hybrid) = simulate_hybrid(&specs, &start, FAMILY_HORIZON).unwrap();
        if !diff_traces(&hybrid, &simulate_oracle(&specs, FAMILY_HORIZON)).is_empty() {
            bad.push(seed);
        }
    }
    let took = clock.elapsed();
    let ok = bad.is_empty() && took < Duration::from_secs(300);
    verdict(
        "oracle_equivalence",
        ok,
        format!("{FAMILY} scenarios, mismatching seeds {bad:?}, {took:?}"),
    );
}

#[test]
fn observer_monotonicity() {
    let _g = serial();
    let (mut negative, mut increasing, mut receptions) = (0, 0, 0);
    for seed in 0..FAMILY {
        let a = audit_observer(&family_member(seed), FAMILY_HORIZON).unwrap();
        negative += a.negative;
        increasing += a.increasing;
        receptions += a.receptions;
    }
    let ok = negative == 0 && increasing == 0;
    verdict(
        "observer_monotonicity",
        ok,
        format!("{receptions} receptions, {negative} negative errors, {increasing} increases"),
    );
}

#[test]
fn estimated_schedulability_soundness() {
    let _g = serial();
    let (mut runs, mut checked, mut unsound) = (0, 0, 0);
    for seed in 0..FAMILY {
        let specs = family_member(seed);
        if simulate_oracle(&specs, FAMILY_HORIZON).has_deadline_miss() {
            continue;
        }
        let a = audit_observer(&specs, FAMILY_HORIZON).unwrap();
        runs += 1;
        checked += a.checked;
        unsound += a.unsound;
    }
    let ok = unsound == 0 && runs > 0;
    verdict(
        "estimated_schedulability_soundness",
        ok,
        format!("{runs} miss-free scenarios, {checked} checked moments, {unsound} false verdicts"),
    );
}

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

#[test]
fn schedulability_corollaries() {
    let _g = serial();
    let (mut misses, mut disagree) = (0, Vec::new());
    for seed in 0..FAMILY {
        let specs = family_member(seed);
        let start = BusState::initial(&specs, Time::ZERO).unwrap();
        let v = window_check(&specs, &start, FAMILY_HORIZON).unwrap();
        let missed = oracle_misses(&specs, FAMILY_HORIZON);
        misses += missed as u32;
        if v.schedulable == missed {
            disagree.push(seed);
        }
    }
    verdict(
        "schedulability_corollaries",
        disagree.is_empty(),
        format!("{FAMILY} scenarios, {misses} with oracle misses, disagreeing seeds {disagree:?}"),
    );
}

/// `x' = u`, one move from `x(b) = xb` over the remaining `len` seconds,
/// tracking zero: the cost is a parabola in the move.
fn integrator_vertex(q: f64, r: f64, xb: f64, len: f64) -> f64 {
    -q * xb * len * len / 2.0 / (q * len.powi(3) / 3.0 + r * len)
}

#[test]
fn mpc_numerics() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_grad = 0.0f64;
    for _ in 0..50 {
        let inst = random_mpc_instance(&mut rng);
        let policy = random_policy(&mut rng, &inst);
        let grad = cost_gradient(&inst.plant, &inst.pb, &inst.x0, &inst.held, &policy, &inst.sched).unwrap();
        let m = inst.plant.inputs();
        let mut fd = DVector::zeros(grad.len());
        for i in 0..grad.len() {
            let h = 1e-5;
            let (mut plus, mut minus) = (policy.clone(), policy.clone());
            plus.moves[i / m][i % m] += h;
            minus.moves[i / m][i % m] -= h;
            fd[i] = (inst.cost(&plus) - inst.cost(&minus)) / (2.0 * h);
        }
        worst_grad = worst_grad.max((&fd - &grad).amax() / grad.amax().max(1e-12));
    }

    let plant = PlantModel::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
    let mut worst_vertex = 0.0f64;
    for (q, r, x0, held, b) in [
        (1.0, 0.01, 0.3, 0.0, 0.0),
        (2.0, 0.5, -0.7, 1.5, 0.013),
        (1.0, 1e-3, 0.05, -2.0, 0.04),
    ] {
        let pb = MpcProblem {
            q1: DMatrix::from_element(1, 1, q),
            q2: DMatrix::from_element(1, 1, r),
            q3: DMatrix::zeros(1, 1),
            horizon: 0.1,
            u_min: DVector::from_element(1, -1e6),
            u_max: DVector::from_element(1, 1e6),
            state_bounds: None,
            reference: Reference::Constant(DVector::zeros(1)),
            solver: SolverOptions::default(),
        };
        let sched = DelaySchedule {
            t0: 0.0,
            boundaries: vec![b],
        };
        let sol = solve_mpc(
            &plant,
            &pb,
            &DVector::from_element(1, x0),
            &DVector::from_element(1, held),
            &sched,
        )
        .unwrap();
        let want = integrator_vertex(q, r, x0 + held * b, 0.1 - b);
        worst_vertex = worst_vertex.max((sol.policy.moves[0][0] - want).abs() / want.abs().max(1.0));
    }

    let mut violations = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let inst = random_mpc_instance(&mut rng);
        let sol = solve_mpc(&inst.plant, &inst.pb, &inst.x0, &inst.held, &inst.sched).unwrap();
        for u in &sol.policy.moves {
            violations += (0..u.len())
                .filter(|&i| u[i] < inst.pb.u_min[i] || u[i] > inst.pb.u_max[i])
                .count();
        }
    }
    let ok = worst_grad <= 1e-5 && worst_vertex <= 1e-8 && violations == 0;
    verdict(
        "mpc_numerics",
        ok,
        format!("gradient rel err {worst_grad:.2e}, 1-D minimiser err {worst_vertex:.2e}, box violations {violations}"),
    );
}

#[test]
fn strategy_comparison() {
    let _g = serial();
    let sc = load_scenario(&common::scenario_path("paper_sec6_runtime.json")).unwrap();
    let cmp = compare_strategies(&sc).unwrap();
    let costs = cmp.costs();
    let ratio1 = costs[0].2 / costs[0].1;
    let ok = costs[1].2 <= costs[1].1 && costs[2].2 <= costs[2].1 && (0.8..=1.05).contains(&ratio1);
    let listing: Vec<String> = costs
        .iter()
        .map(|(c, w, t)| format!("loop {c} wc {w:.4e} tm {t:.4e}"))
        .collect();
    verdict(
        "strategy_comparison",
        ok,
        format!("{}; loop 1 ratio {ratio1:.4}", listing.join(", ")),
    );
}

#[test]
fn performance() {
    let _g = serial();
    let sc = golden();
    let s = bench_scaling(&sc.specs, Time(100_000 * MS), 3).unwrap();
    let speedup = s.base.speedup().unwrap();
    let (h, o) = s.ratios().unwrap();
    let linear = |r: f64| (2.0 * 0.75..=2.0 * 1.25).contains(&r);
    let ok = speedup >= 10.0 && linear(h) && linear(o);
    verdict(
        "performance",
        ok,
        format!(
            "100 s: hybrid {:?}, oracle {:?}, speedup {speedup:.1}x; doubling hybrid x{h:.3}, oracle x{o:.3}",
            s.base.hybrid, s.base.oracle
        ),
    );
}

fn csv_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            csv_files(&p, out);
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
}

#[test]
fn determinism() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    for scenario in ["paper_sec6.json", "paper_sec6_runtime.json"] {
        let path = common::scenario_path(scenario).display().to_string();
        let commands: [&[&str]; 3] = [&["run", "--strategy", "wc"], &["run", "--strategy", "tm"], &["compare"]];
        for (ci, args) in commands.iter().enumerate() {
            let mut outputs = Vec::new();
            for rep in 0..2 {
                let out = dir.path().join(format!("{scenario}-{ci}-{rep}"));
                let status = Command::new(env!("CARGO_BIN_EXE_cantiming"))
                    .arg(args[0])
                    .arg(&path)
                    .args(&args[1..])
                    .arg("--out")
                    .arg(&out)
                    .output()
                    .unwrap()
                    .status;
                assert!(status.success(), "{scenario} {args:?}");
                outputs.push(out);
            }
            let mut files = Vec::new();
            csv_files(&outputs[0], &mut files);
            for f in files {
                let twin = outputs[1].join(f.strip_prefix(&outputs[0]).unwrap());
                compared += 1;
                if std::fs::read(&f).unwrap() != std::fs::read(&twin).unwrap_or_default() {
                    differing.push(f.display().to_string());
                }
            }
        }
    }
    verdict(
        "determinism",
        differing.is_empty() && compared > 0,
        format!("{compared} CSV files compared, differing {differing:?}"),
    );
}
