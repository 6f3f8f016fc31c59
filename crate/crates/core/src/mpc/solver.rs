//! Box-constrained minimisation of the convex tracking cost.
//!
//! Projected gradient with Jacobi scaling and step `1/L`, `L` the largest
//! eigenvalue of the scaled curvature bound. After each gradient step a
//! Newton step restricted to the free variables is tried and kept when it
//! lowers the cost further; on the badly conditioned problems produced by
//! fast unstable plants this is what makes the iteration finish.

use nalgebra::{DMatrix, DVector};

use super::cost::QuadraticCost;
use super::plant::PlantModel;
use super::problem::{ControlPolicy, DelaySchedule, MpcProblem};
use crate::error::MpcError;

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub policy: ControlPolicy,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Scaled projected-gradient residual at the returned policy, in input
    /// units.
    pub residual: f64,
    /// Cost of every iterate, starting point first. Non-increasing.
    pub cost_history: Vec<f64>,
}

struct Boxed<'a> {
    q: &'a QuadraticCost,
    lo: DVector<f64>,
    hi: DVector<f64>,
    /// Jacobi scale per variable; zero marks a variable with no influence.
    diag: DVector<f64>,
}

impl Boxed<'_> {
    fn project(&self, mu: &mut DVector<f64>) {
        for i in 0..mu.len() {
            mu[i] = mu[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    fn residual(&self, mu: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        (0..mu.len())
            .filter(|&i| self.diag[i] > 0.0)
            .map(|i| (mu[i] - (mu[i] - grad[i] / self.diag[i]).clamp(self.lo[i], self.hi[i])).abs())
            .fold(0.0, f64::max)
    }

    fn gradient_step(&self, mu: &DVector<f64>, grad: &DVector<f64>, lipschitz: f64) -> DVector<f64> {
        let mut next = mu.clone();
        for i in 0..mu.len() {
            if self.diag[i] > 0.0 {
                next[i] -= grad[i] / (lipschitz * self.diag[i]);
            }
        }
        self.project(&mut next);
        next
    }

    fn newton_step(&self, mu: &DVector<f64>, value: f64) -> Option<(DVector<f64>, f64)> {
        let grad = self.q.gradient(mu);
        let free: Vec<usize> = (0..mu.len())
            .filter(|&i| {
                self.diag[i] > 0.0 && !(mu[i] <= self.lo[i] && grad[i] > 0.0) && !(mu[i] >= self.hi[i] && grad[i] < 0.0)
            })
            .collect();
        if free.is_empty() {
            return None;
        }
        let hess = self.q.hessian_at(mu);
        let hf = DMatrix::from_fn(free.len(), free.len(), |r, c| hess[(free[r], free[c])]);
        let gf = DVector::from_fn(free.len(), |r, _| -grad[free[r]]);
        let dir = hf.cholesky()?.solve(&gf);
        let mut t = 1.0;
        for _ in 0..40 {
            let mut trial = mu.clone();
            for (k, &i) in free.iter().enumerate() {
                trial[i] += t * dir[k];
            }
            self.project(&mut trial);
            let v = self.q.value(&trial);
            let decrease = grad.dot(&(&trial - mu));
            if v <= value + 1e-4 * decrease.min(0.0) {
                return Some((trial, v));
            }
            t *= 0.5;
        }
        None
    }
}

/// Minimises the cost over the moves of `schedule`, starting from zero input
/// clamped into the bounds.
pub fn solve_mpc(
    plant: &PlantModel,
    problem: &MpcProblem,
    x0: &DVector<f64>,
    held: &DVector<f64>,
    schedule: &DelaySchedule,
) -> Result<MpcSolution, MpcError> {
    solve_mpc_from(plant, problem, x0, held, schedule, None)
}

/// As [`solve_mpc`], starting from `start` (projected onto the bounds).
pub fn solve_mpc_from(
    plant: &PlantModel,
    problem: &MpcProblem,
    x0: &DVector<f64>,
    held: &DVector<f64>,
    schedule: &DelaySchedule,
    start: Option<&ControlPolicy>,
) -> Result<MpcSolution, MpcError> {
    let q = QuadraticCost::build(plant, problem, x0, held, schedule)?;
    let m = plant.inputs();
    let k = schedule.moves();
    let lo = DVector::from_fn(m * k, |i, _| problem.u_min[i % m]);
    let hi = DVector::from_fn(m * k, |i, _| problem.u_max[i % m]);
    let bound = q.curvature_bound();
    let diag = DVector::from_fn(m * k, |i, _| bound[(i, i)].max(0.0));
    let bx = Boxed { q: &q, lo, hi, diag };

    let mut mu = match start {
        Some(p) => {
            let v = p.stacked();
            if v.len() != m * k {
                return Err(MpcError::Dimension(format!(
                    "start has {} entries, expected {}",
                    v.len(),
                    m * k
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(MpcError::NonFinite("start policy"));
            }
            v
        }
        None => DVector::zeros(m * k),
    };
    bx.project(&mut mu);
    for i in 0..mu.len() {
        if bx.diag[i] == 0.0 {
            mu[i] = 0.0f64.clamp(bx.lo[i], bx.hi[i]);
        }
    }

    let inv_sqrt = DVector::from_fn(
        m * k,
        |i, _| if bx.diag[i] > 0.0 { 1.0 / bx.diag[i].sqrt() } else { 0.0 },
    );
    let scaled = DMatrix::from_fn(m * k, m * k, |r, c| bound[(r, c)] * inv_sqrt[r] * inv_sqrt[c]);
    let lipschitz = scaled.symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);

    let mut value = q.value(&mu);
    let mut history = vec![value];
    let mut grad = q.gradient(&mu);
    let mut residual = bx.residual(&mu, &grad);
    let mut iterations = 0;
    while residual > problem.solver.tolerance && iterations < problem.solver.max_iterations {
        iterations += 1;
        let pg = bx.gradient_step(&mu, &grad, lipschitz);
        let mut next_value = q.value(&pg);
        let mut next = pg;
        if let Some((nt, v)) = bx.newton_step(&next, next_value) {
            if v <= next_value {
                next = nt;
                next_value = v;
            }
        }
        if next_value.partial_cmp(&value).is_none_or(|o| o.is_gt()) {
            // No representable decrease left.
            break;
        }
        mu = next;
        value = next_value;
        history.push(value);
        grad = q.gradient(&mu);
        residual = bx.residual(&mu, &grad);
    }
    if !value.is_finite() {
        return Err(MpcError::NonFinite("cost"));
    }
    Ok(MpcSolution {
        policy: ControlPolicy::unstack(&mu, m),
        cost: value,
        converged: residual <= problem.solver.tolerance,
        iterations,
        residual,
        cost_history: history,
    })
}

/// The first planned move and the window it is expected to hold over.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstMove {
    pub value: DVector<f64>,
    pub from: f64,
    /// Next boundary, if the schedule has one.
    pub hold_until: Option<f64>,
}

pub fn apply_first_move(policy: &ControlPolicy, schedule: &DelaySchedule) -> Result<FirstMove, MpcError> {
    let value = policy.moves.first().ok_or(MpcError::EmptyPolicy)?.clone();
    let from = *schedule.boundaries.first().ok_or(MpcError::EmptyPolicy)?;
    Ok(FirstMove {
        value,
        from,
        hold_until: schedule.boundaries.get(1).copied(),
    })
}
