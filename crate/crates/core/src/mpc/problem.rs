//! Problem data: weights, bounds, reference, and the delay schedule that
//! fixes when each planned move reaches the actuator.

use nalgebra::{DMatrix, DVector};

use super::plant::PlantModel;
use crate::error::MpcError;

/// Output reference `lambda(t)`. The scalar shapes apply to every output.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Constant(DVector<f64>),
    /// `+amplitude` on the first half of each period, `-amplitude` on the
    /// second, starting at `t = 0`.
    Square {
        amplitude: f64,
        period: f64,
    },
    Sine {
        amplitude: f64,
        period: f64,
        phase: f64,
    },
}

impl Reference {
    pub fn value(&self, t: f64, outputs: usize) -> DVector<f64> {
        match self {
            Reference::Constant(v) => v.clone(),
            Reference::Square { amplitude, period } => {
                let phase = (t / period).rem_euclid(1.0);
                DVector::from_element(outputs, if phase < 0.5 { *amplitude } else { -amplitude })
            }
            Reference::Sine {
                amplitude,
                period,
                phase,
            } => DVector::from_element(outputs, amplitude * (std::f64::consts::TAU * t / period + phase).sin()),
        }
    }

    /// Discontinuities strictly inside `(a, b)`.
    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let Reference::Square { period, .. } = self else {
            return Vec::new();
        };
        let half = period / 2.0;
        let mut k = (a / half).floor() as i64 + 1;
        let mut out = Vec::new();
        loop {
            let t = k as f64 * half;
            if t >= b {
                break;
            }
            if t > a {
                out.push(t);
            }
            k += 1;
        }
        out
    }

    fn check(&self, outputs: usize) -> Result<(), MpcError> {
        match self {
            Reference::Constant(v) => {
                if v.len() != outputs {
                    return Err(MpcError::Dimension(format!(
                        "reference has {} entries, plant has {outputs} outputs",
                        v.len()
                    )));
                }
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(MpcError::NonFinite("reference"));
                }
            }
            Reference::Square { amplitude, period } | Reference::Sine { amplitude, period, .. } => {
                if !amplitude.is_finite() || !period.is_finite() || *period <= 0.0 {
                    return Err(MpcError::NonFinite("reference"));
                }
            }
        }
        Ok(())
    }
}

/// Soft box on the state: `weight * |violation|^2` is added to the running
/// cost.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once the scaled projected-gradient residual, in input units,
    /// falls to this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

/// `J = ∫ (λ-y)'Q1(λ-y) + u'Q2u dt + x(t0+Tp)'Q3x(t0+Tp)` over the horizon
/// `Tp` seconds, subject to `u_min <= u <= u_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub q3: DMatrix<f64>,
    pub horizon: f64,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub state_bounds: Option<StateBounds>,
    pub reference: Reference,
    pub solver: SolverOptions,
}

fn check_weight(q: &DMatrix<f64>, size: usize, what: &'static str) -> Result<(), MpcError> {
    if q.nrows() != size || q.ncols() != size {
        return Err(MpcError::Dimension(format!(
            "{what} is {}x{}, expected {size}x{size}",
            q.nrows(),
            q.ncols()
        )));
    }
    if !q.iter().all(|v| v.is_finite()) {
        return Err(MpcError::NonFinite(what));
    }
    let scale = q.amax().max(1.0);
    if (q - q.transpose()).amax() > 1e-12 * scale {
        return Err(MpcError::Dimension(format!("{what} is not symmetric")));
    }
    if q.clone().symmetric_eigenvalues().min() < -1e-12 * scale {
        return Err(MpcError::Dimension(format!("{what} is not positive semidefinite")));
    }
    Ok(())
}

impl MpcProblem {
    pub fn validate(&self, plant: &PlantModel) -> Result<(), MpcError> {
        check_weight(&self.q1, plant.outputs(), "Q1")?;
        check_weight(&self.q2, plant.inputs(), "Q2")?;
        check_weight(&self.q3, plant.states(), "Q3")?;
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(MpcError::InvalidSchedule(format!("horizon {} s", self.horizon)));
        }
        plant.check_input(&self.u_min, "u_min")?;
        plant.check_input(&self.u_max, "u_max")?;
        if self.u_min.iter().zip(self.u_max.iter()).any(|(lo, hi)| lo > hi) {
            return Err(MpcError::Dimension("u_min exceeds u_max".into()));
        }
        if let Some(sb) = &self.state_bounds {
            plant.check_state(&sb.lower, "state lower bound")?;
            plant.check_state(&sb.upper, "state upper bound")?;
            if !sb.weight.is_finite() || sb.weight < 0.0 {
                return Err(MpcError::NonFinite("state bound weight"));
            }
        }
        self.reference.check(plant.outputs())?;
        Ok(())
    }
}

/// Start of the horizon and the instants at which planned moves take effect:
/// move `j` is applied from `boundaries[j]` until the next boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySchedule {
    pub t0: f64,
    pub boundaries: Vec<f64>,
}

impl DelaySchedule {
    // Negated comparisons so that NaN boundaries fail.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self, horizon: f64) -> Result<(), MpcError> {
        if !self.t0.is_finite() {
            return Err(MpcError::NonFinite("t0"));
        }
        let end = self.t0 + horizon;
        let Some(&first) = self.boundaries.first() else {
            return Err(MpcError::InvalidSchedule("no boundary inside the horizon".into()));
        };
        if !(first >= self.t0) {
            return Err(MpcError::InvalidSchedule(format!(
                "boundary {first} precedes t0 {}",
                self.t0
            )));
        }
        if self.boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(MpcError::InvalidSchedule(
                "boundaries are not strictly increasing".into(),
            ));
        }
        let last = *self.boundaries.last().unwrap();
        if !(last < end) {
            return Err(MpcError::InvalidSchedule(format!(
                "boundary {last} is not before the horizon end {end}"
            )));
        }
        Ok(())
    }

    pub fn moves(&self) -> usize {
        self.boundaries.len()
    }

    /// Move in force at `t`: `None` before the first boundary.
    pub fn segment_at(&self, t: f64) -> Option<usize> {
        self.boundaries.iter().rposition(|&b| b <= t)
    }
}

/// One input vector per schedule boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolicy {
    pub moves: Vec<DVector<f64>>,
}

impl ControlPolicy {
    pub fn constant(u: DVector<f64>, moves: usize) -> Self {
        ControlPolicy { moves: vec![u; moves] }
    }

    pub(crate) fn stacked(&self) -> DVector<f64> {
        let rows: Vec<f64> = self.moves.iter().flat_map(|u| u.iter().copied()).collect();
        DVector::from_vec(rows)
    }

    pub(crate) fn unstack(mu: &DVector<f64>, inputs: usize) -> Self {
        ControlPolicy {
            moves: mu.as_slice().chunks(inputs).map(DVector::from_column_slice).collect(),
        }
    }
}

/// Quadrature cell length, seconds.
pub const QUADRATURE_STEP: f64 = 1e-3;

/// Points splitting `[a, b]` into cells no longer than [`QUADRATURE_STEP`],
/// on a grid anchored at `anchor`, with every entry of `breaks` inside `(a, b)`
/// also a cell edge.
pub fn quadrature_grid(a: f64, b: f64, anchor: f64, breaks: &[f64]) -> Vec<f64> {
    let mut pts = vec![a, b];
    let first = ((a - anchor) / QUADRATURE_STEP).floor() as i64 + 1;
    let mut k = first;
    loop {
        let t = anchor + k as f64 * QUADRATURE_STEP;
        if t >= b {
            break;
        }
        if t > a {
            pts.push(t);
        }
        k += 1;
    }
    pts.extend(breaks.iter().copied().filter(|&t| t > a && t < b));
    pts.sort_by(f64::total_cmp);
    // Grid points that land within rounding of a break collapse onto it.
    let tol = 1e-12 * b.abs().max(1.0);
    let mut out: Vec<f64> = Vec::with_capacity(pts.len());
    for t in pts {
        match out.last_mut() {
            Some(last) if t - *last <= tol => {
                if *last != a && (t == b || breaks.contains(&t)) {
                    *last = t;
                }
            }
            _ => out.push(t),
        }
    }
    if out.last() != Some(&b) {
        out.push(b);
    }
    out
}
