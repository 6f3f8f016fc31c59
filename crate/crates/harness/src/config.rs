//! Scenario files: JSON schema, validation and conversion to model types.
//!
//! Durations are milliseconds and must be whole multiples of the quantum.
//! Validation errors name the offending field as a path such as
//! `chains[2].sensor_priority`.

use std::path::Path;

use cantiming::chain::validate_chains;
use cantiming::mpc::{MpcProblem, PlantModel, Reference, SolverOptions, StateBounds};
use cantiming::{ChainId, ChainParams, ConfigError, MessageChainSpec, Priority, Quantum, Segment, Time};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Constant delay equal to the worst case seen on the nominal bus.
    WorstCase,
    /// Per-instance delays predicted from the observed bus state.
    TimingModel,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::WorstCase => "worst_case",
            Strategy::TimingModel => "timing_model",
        }
    }
}

fn default_quantum_ns() -> u64 {
    1_000
}

fn default_probe_ms() -> f64 {
    1_000.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_quantum_ns")]
    pub quantum_ns: u64,
    pub horizon_ms: f64,
    #[serde(default)]
    pub chains: Vec<ChainConfig>,
    #[serde(default)]
    pub loops: Vec<LoopConfig>,
    #[serde(default)]
    pub mpc: Option<MpcConfig>,
    #[serde(default)]
    pub runtime_changes: Vec<ChangeConfig>,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    /// Window over which the worst-case baseline delay is measured.
    #[serde(default = "default_probe_ms")]
    pub worst_case_probe_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub id: u32,
    pub period_ms: f64,
    pub sensor_prep_ms: f64,
    pub sensor_tx_ms: f64,
    pub control_prep_ms: f64,
    pub control_tx_ms: f64,
    pub sensor_priority: u32,
    pub control_priority: u32,
    #[serde(default)]
    pub first_arrival_ms: f64,
    /// `false` for a sporadic chain that stays silent until a runtime change
    /// activates it.
    #[serde(default = "yes")]
    pub initially_active: bool,
}

/// From `at_ms` on, `chain` uses its previous parameters with the given
/// fields replaced, or goes silent with `active: false`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeConfig {
    pub at_ms: f64,
    pub chain: u32,
    #[serde(default)]
    pub active: Option<bool>,
    #[serde(default)]
    pub period_ms: Option<f64>,
    #[serde(default)]
    pub sensor_prep_ms: Option<f64>,
    #[serde(default)]
    pub sensor_tx_ms: Option<f64>,
    #[serde(default)]
    pub control_prep_ms: Option<f64>,
    #[serde(default)]
    pub control_tx_ms: Option<f64>,
    #[serde(default)]
    pub sensor_priority: Option<u32>,
    #[serde(default)]
    pub control_priority: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub chain: u32,
    pub plant: PlantConfig,
    /// Initial plant state; zero when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    /// `A = [0 1; a b]`, `B = [0; c]`, `y = x1`.
    Pendulum { a: f64, b: f64, c: f64 },
    /// Row-major matrices.
    Lti {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
    },
}

/// A scalar stands for that multiple of the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

/// A scalar applies to every component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Componentwise {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    Constant {
        value: Componentwise,
    },
    Square {
        amplitude: f64,
        period_ms: f64,
    },
    Sine {
        amplitude: f64,
        period_ms: f64,
        #[serde(default)]
        phase: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBoundsConfig {
    pub lower: Componentwise,
    pub upper: Componentwise,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    pub q1: Weight,
    pub q2: Weight,
    pub q3: Weight,
    pub horizon_ms: f64,
    pub u_min: Componentwise,
    pub u_max: Componentwise,
    #[serde(default)]
    pub state_bounds: Option<StateBoundsConfig>,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

/// One control loop: a chain closing the loop around a plant.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLoop {
    pub chain: ChainId,
    pub plant: PlantModel,
    pub x0: DVector<f64>,
    pub problem: MpcProblem,
    pub mpc_horizon: Time,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub quantum: Quantum,
    pub horizon: Time,
    pub specs: Vec<MessageChainSpec>,
    pub loops: Vec<ControlLoop>,
    pub strategy: Option<Strategy>,
    pub probe: Time,
}

impl Scenario {
    pub fn millisecond(&self) -> Time {
        // Checked on load.
        self.quantum.millisecond().expect("quantum divides a millisecond")
    }
}

fn ticks(q: Quantum, field: impl Into<String>, ms: f64) -> Result<Time, ConfigError> {
    let field = field.into();
    if !ms.is_finite() || ms < 0.0 {
        return Err(ConfigError::invalid(
            field,
            format!("{ms} ms is not a non-negative duration"),
        ));
    }
    q.from_millis(ms).ok_or(ConfigError::Misaligned {
        field,
        value: ms,
        quantum_ns: q.nanos(),
    })
}

fn chain_params(q: Quantum, at: &str, c: &ChainConfig) -> Result<ChainParams, ConfigError> {
    let p = ChainParams {
        period: ticks(q, format!("{at}.period_ms"), c.period_ms)?,
        sensor_prep: ticks(q, format!("{at}.sensor_prep_ms"), c.sensor_prep_ms)?,
        sensor_tx: ticks(q, format!("{at}.sensor_tx_ms"), c.sensor_tx_ms)?,
        control_prep: ticks(q, format!("{at}.control_prep_ms"), c.control_prep_ms)?,
        control_tx: ticks(q, format!("{at}.control_tx_ms"), c.control_tx_ms)?,
        sensor_priority: Priority(c.sensor_priority),
        control_priority: Priority(c.control_priority),
    };
    if p.period == Time::ZERO {
        return Err(ConfigError::invalid(format!("{at}.period_ms"), "must be positive"));
    }
    Ok(p)
}

fn apply_change(q: Quantum, at: &str, base: &ChainParams, c: &ChangeConfig) -> Result<ChainParams, ConfigError> {
    let mut p = *base;
    let set = |v: Option<f64>, name: &str, slot: &mut Time| -> Result<(), ConfigError> {
        if let Some(ms) = v {
            *slot = ticks(q, format!("{at}.{name}"), ms)?;
        }
        Ok(())
    };
    set(c.period_ms, "period_ms", &mut p.period)?;
    set(c.sensor_prep_ms, "sensor_prep_ms", &mut p.sensor_prep)?;
    set(c.sensor_tx_ms, "sensor_tx_ms", &mut p.sensor_tx)?;
    set(c.control_prep_ms, "control_prep_ms", &mut p.control_prep)?;
    set(c.control_tx_ms, "control_tx_ms", &mut p.control_tx)?;
    if let Some(v) = c.sensor_priority {
        p.sensor_priority = Priority(v);
    }
    if let Some(v) = c.control_priority {
        p.control_priority = Priority(v);
    }
    if p.period == Time::ZERO {
        return Err(ConfigError::invalid(format!("{at}.period_ms"), "must be positive"));
    }
    Ok(p)
}

fn build_specs(q: Quantum, file: &ScenarioFile) -> Result<Vec<MessageChainSpec>, ConfigError> {
    let mut specs = Vec::with_capacity(file.chains.len());
    for (i, c) in file.chains.iter().enumerate() {
        let at = format!("chains[{i}]");
        if c.id as usize != i + 1 {
            return Err(ConfigError::invalid(
                format!("{at}.id"),
                format!(
                    "chains must be numbered 1, 2, ... in order; expected {}, found {}",
                    i + 1,
                    c.id
                ),
            ));
        }
        let base = chain_params(q, &at, c)?;
        let first_arrival = ticks(q, format!("{at}.first_arrival_ms"), c.first_arrival_ms)?;
        let mut segments = vec![Segment {
            start: Time::ZERO,
            params: c.initially_active.then_some(base),
        }];
        let mut current = base;
        let mut changes: Vec<(usize, &ChangeConfig)> = file
            .runtime_changes
            .iter()
            .enumerate()
            .filter(|(_, ch)| ch.chain == c.id)
            .collect();
        changes.sort_by(|a, b| a.1.at_ms.total_cmp(&b.1.at_ms));
        for (j, ch) in changes {
            let at = format!("runtime_changes[{j}]");
            let start = ticks(q, format!("{at}.at_ms"), ch.at_ms)?;
            current = apply_change(q, &at, &current, ch)?;
            let params = if ch.active.unwrap_or(true) { Some(current) } else { None };
            match segments.last_mut() {
                Some(last) if last.start == start && start == Time::ZERO => last.params = params,
                Some(last) if last.start == start => {
                    return Err(ConfigError::invalid(
                        format!("{at}.at_ms"),
                        format!("chain {} already changes at {} ms", c.id, ch.at_ms),
                    ))
                }
                _ => segments.push(Segment { start, params }),
            }
        }
        // A silent chain first arrives when it is first activated.
        let first_arrival = if segments[0].params.is_some() {
            first_arrival
        } else {
            segments
                .iter()
                .find(|g| g.params.is_some() && g.start >= first_arrival)
                .map(|g| g.start)
                .ok_or_else(|| ConfigError::invalid(format!("{at}.initially_active"), "the chain is never activated"))?
        };
        specs.push(MessageChainSpec {
            id: ChainId(c.id),
            first_arrival,
            segments,
        });
    }
    for (j, ch) in file.runtime_changes.iter().enumerate() {
        if ch.chain == 0 || ch.chain as usize > file.chains.len() {
            return Err(ConfigError::invalid(
                format!("runtime_changes[{j}].chain"),
                format!("no chain {}", ch.chain),
            ));
        }
    }
    check_priorities(file)?;
    validate_chains(&specs)?;
    Ok(specs)
}

/// Every message identifier belongs to one chain across all runtime
/// changes, and a chain's two messages differ.
fn check_priorities(file: &ScenarioFile) -> Result<(), ConfigError> {
    // (priority, chain, field, from the chain's own entry)
    let mut uses: Vec<(u32, u32, String, bool)> = Vec::new();
    for (i, c) in file.chains.iter().enumerate() {
        uses.push((c.sensor_priority, c.id, format!("chains[{i}].sensor_priority"), true));
        uses.push((c.control_priority, c.id, format!("chains[{i}].control_priority"), true));
    }
    for (j, ch) in file.runtime_changes.iter().enumerate() {
        if let Some(p) = ch.sensor_priority {
            uses.push((p, ch.chain, format!("runtime_changes[{j}].sensor_priority"), false));
        }
        if let Some(p) = ch.control_priority {
            uses.push((p, ch.chain, format!("runtime_changes[{j}].control_priority"), false));
        }
    }
    for (k, (prio, chain, path, base)) in uses.iter().enumerate() {
        let clash = uses[..k]
            .iter()
            .find(|(p, c, _, b)| p == prio && (c != chain || (*b && *base)));
        if let Some((_, _, first, _)) = clash {
            return Err(ConfigError::DuplicatePriority {
                priority: *prio,
                first: first.clone(),
                second: path.clone(),
            });
        }
    }
    Ok(())
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(ConfigError::invalid(field, "empty matrix"));
    }
    if let Some(r) = rows.iter().position(|r| r.len() != m) {
        return Err(ConfigError::invalid(
            format!("{field}[{r}]"),
            format!("expected {m} columns"),
        ));
    }
    Ok(DMatrix::from_fn(n, m, |r, c| rows[r][c]))
}

fn weight(field: &str, w: &Weight, size: usize) -> Result<DMatrix<f64>, ConfigError> {
    let m = match w {
        Weight::Scalar(s) => DMatrix::identity(size, size) * *s,
        Weight::Matrix(rows) => matrix(field, rows)?,
    };
    if m.nrows() != size || m.ncols() != size {
        return Err(ConfigError::invalid(field, format!("expected a {size}x{size} matrix")));
    }
    Ok(m)
}

fn vector(field: &str, v: &Componentwise, size: usize) -> Result<DVector<f64>, ConfigError> {
    match v {
        Componentwise::Scalar(s) => Ok(DVector::from_element(size, *s)),
        Componentwise::Vector(xs) if xs.len() == size => Ok(DVector::from_column_slice(xs)),
        Componentwise::Vector(xs) => Err(ConfigError::invalid(
            field,
            format!("expected {size} entries, found {}", xs.len()),
        )),
    }
}

fn problem(q: Quantum, cfg: &MpcConfig, plant: &PlantModel, at: &str) -> Result<(MpcProblem, Time), ConfigError> {
    let horizon = ticks(q, "mpc.horizon_ms", cfg.horizon_ms)?;
    if horizon == Time::ZERO {
        return Err(ConfigError::invalid("mpc.horizon_ms", "must be positive"));
    }
    let reference = match &cfg.reference {
        ReferenceConfig::Constant { value } => {
            Reference::Constant(vector("mpc.reference.value", value, plant.outputs())?)
        }
        ReferenceConfig::Square { amplitude, period_ms } => Reference::Square {
            amplitude: *amplitude,
            period: period_ms / 1e3,
        },
        ReferenceConfig::Sine {
            amplitude,
            period_ms,
            phase,
        } => Reference::Sine {
            amplitude: *amplitude,
            period: period_ms / 1e3,
            phase: *phase,
        },
    };
    let state_bounds = match &cfg.state_bounds {
        None => None,
        Some(sb) => Some(StateBounds {
            lower: vector("mpc.state_bounds.lower", &sb.lower, plant.states())?,
            upper: vector("mpc.state_bounds.upper", &sb.upper, plant.states())?,
            weight: sb.weight,
        }),
    };
    let mut solver = SolverOptions::default();
    if let Some(t) = cfg.tolerance {
        solver.tolerance = t;
    }
    if let Some(n) = cfg.max_iterations {
        solver.max_iterations = n;
    }
    let pb = MpcProblem {
        q1: weight("mpc.q1", &cfg.q1, plant.outputs())?,
        q2: weight("mpc.q2", &cfg.q2, plant.inputs())?,
        q3: weight("mpc.q3", &cfg.q3, plant.states())?,
        horizon: q.to_secs(horizon),
        u_min: vector("mpc.u_min", &cfg.u_min, plant.inputs())?,
        u_max: vector("mpc.u_max", &cfg.u_max, plant.inputs())?,
        state_bounds,
        reference,
        solver,
    };
    pb.validate(plant)
        .map_err(|e| ConfigError::invalid(format!("mpc (for {at})"), e.to_string()))?;
    Ok((pb, horizon))
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<Scenario, ConfigError> {
        let quantum = Quantum::from_nanos(self.quantum_ns)
            .ok_or_else(|| ConfigError::invalid("quantum_ns", "must be positive"))?;
        if quantum.millisecond().is_none() {
            return Err(ConfigError::invalid("quantum_ns", "must divide one millisecond"));
        }
        let horizon = ticks(quantum, "horizon_ms", self.horizon_ms)?;
        let probe = ticks(quantum, "worst_case_probe_ms", self.worst_case_probe_ms)?;
        let specs = build_specs(quantum, self)?;
        let mut loops: Vec<ControlLoop> = Vec::new();
        for (i, l) in self.loops.iter().enumerate() {
            let at = format!("loops[{i}]");
            if l.chain == 0 || l.chain as usize > specs.len() {
                return Err(ConfigError::invalid(
                    format!("{at}.chain"),
                    format!("no chain {}", l.chain),
                ));
            }
            if loops.iter().any(|o| o.chain == ChainId(l.chain)) {
                return Err(ConfigError::invalid(
                    format!("{at}.chain"),
                    format!("chain {} already closes a loop", l.chain),
                ));
            }
            let plant = match &l.plant {
                PlantConfig::Pendulum { a, b, c } => PlantModel::pendulum(*a, *b, *c),
                PlantConfig::Lti { a, b, c } => PlantModel::new(
                    matrix(&format!("{at}.plant.lti.a"), a)?,
                    matrix(&format!("{at}.plant.lti.b"), b)?,
                    matrix(&format!("{at}.plant.lti.c"), c)?,
                ),
            }
            .map_err(|e| ConfigError::invalid(format!("{at}.plant"), e.to_string()))?;
            let x0 = match &l.x0 {
                None => DVector::zeros(plant.states()),
                Some(v) if v.len() == plant.states() && v.iter().all(|x| x.is_finite()) => {
                    DVector::from_column_slice(v)
                }
                Some(_) => {
                    return Err(ConfigError::invalid(
                        format!("{at}.x0"),
                        format!("expected {} finite entries", plant.states()),
                    ))
                }
            };
            let cfg = self
                .mpc
                .as_ref()
                .ok_or_else(|| ConfigError::invalid("mpc", "required when loops are present"))?;
            let (problem, mpc_horizon) = problem(quantum, cfg, &plant, &at)?;
            loops.push(ControlLoop {
                chain: ChainId(l.chain),
                plant,
                x0,
                problem,
                mpc_horizon,
            });
        }
        Ok(Scenario {
            quantum,
            horizon,
            specs,
            loops,
            strategy: self.strategy,
            probe,
        })
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, HarnessError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    Ok(file.validate()?)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}
