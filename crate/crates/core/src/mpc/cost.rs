//! Tracking cost by Gauss-Legendre quadrature on millisecond cells, evaluated
//! either by direct simulation or through the affine map from the stacked
//! moves to the trajectory.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::plant::{discretize_segment, PlantModel};
use super::problem::{quadrature_grid, ControlPolicy, DelaySchedule, MpcProblem, Reference};
use crate::error::MpcError;

/// Three-point Gauss-Legendre nodes and weights on `[0, 1]`.
pub const GAUSS3: [(f64, f64); 3] = [
    (0.5 - 0.387_298_334_620_741_7, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.5 + 0.387_298_334_620_741_7, 5.0 / 18.0),
];

/// Discretizations memoised by step length.
#[derive(Debug)]
pub struct Propagator<'a> {
    plant: &'a PlantModel,
    cache: HashMap<i64, (DMatrix<f64>, DMatrix<f64>)>,
}

impl<'a> Propagator<'a> {
    pub fn new(plant: &'a PlantModel) -> Self {
        Propagator {
            plant,
            cache: HashMap::new(),
        }
    }

    pub fn plant(&self) -> &'a PlantModel {
        self.plant
    }

    /// `(Ad, Bd)` for `h`. Lengths equal to within a femtosecond share an
    /// entry, so grid cells built from differences of sums hit the cache.
    pub fn matrices(&mut self, h: f64) -> Result<&(DMatrix<f64>, DMatrix<f64>), MpcError> {
        let key = (h * 1e15).round() as i64;
        if !self.cache.contains_key(&key) {
            let m = discretize_segment(self.plant, h)?;
            self.cache.insert(key, m);
        }
        Ok(&self.cache[&key])
    }

    pub fn step(&mut self, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> Result<DVector<f64>, MpcError> {
        let (ad, bd) = self.matrices(h)?;
        Ok(ad * x + bd * u)
    }
}

/// Running cost over the cell `[a, b]` for state `x` at `a` and input `u`
/// held throughout.
#[allow(clippy::too_many_arguments)]
pub fn cell_cost(
    prop: &mut Propagator<'_>,
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    reference: &Reference,
    x: &DVector<f64>,
    u: &DVector<f64>,
    a: f64,
    b: f64,
) -> Result<f64, MpcError> {
    let h = b - a;
    let c = prop.plant().c().clone();
    let input = (u.transpose() * q2 * u)[0];
    let mut sum = 0.0;
    for (node, w) in GAUSS3 {
        let xs = prop.step(x, u, node * h)?;
        let e = reference.value(a + node * h, c.nrows()) - &c * xs;
        sum += w * ((e.transpose() * q1 * &e)[0] + input);
    }
    Ok(sum * h)
}

fn soft_penalty(problem: &MpcProblem, x: &DVector<f64>) -> f64 {
    let Some(sb) = &problem.state_bounds else {
        return 0.0;
    };
    let mut s = 0.0;
    for i in 0..x.len() {
        let v = (x[i] - sb.upper[i]).max(0.0) + (sb.lower[i] - x[i]).max(0.0);
        s += v * v;
    }
    sb.weight * s
}

fn check_call(
    plant: &PlantModel,
    problem: &MpcProblem,
    x0: &DVector<f64>,
    held: &DVector<f64>,
    schedule: &DelaySchedule,
) -> Result<(), MpcError> {
    problem.validate(plant)?;
    plant.check_state(x0, "x0")?;
    plant.check_input(held, "held input")?;
    schedule.validate(problem.horizon)
}

fn grid(problem: &MpcProblem, schedule: &DelaySchedule) -> Vec<f64> {
    let end = schedule.t0 + problem.horizon;
    let mut breaks = schedule.boundaries.clone();
    breaks.extend(problem.reference.breakpoints(schedule.t0, end));
    quadrature_grid(schedule.t0, end, schedule.t0, &breaks)
}

/// Cost of `policy` by forward simulation from `x0` at `schedule.t0`, with
/// `held` in force until the first boundary.
pub fn evaluate_cost(
    plant: &PlantModel,
    problem: &MpcProblem,
    x0: &DVector<f64>,
    held: &DVector<f64>,
    policy: &ControlPolicy,
    schedule: &DelaySchedule,
) -> Result<f64, MpcError> {
    check_call(plant, problem, x0, held, schedule)?;
    if policy.moves.len() != schedule.moves() {
        return Err(MpcError::Dimension(format!(
            "{} moves for {} boundaries",
            policy.moves.len(),
            schedule.moves()
        )));
    }
    for u in &policy.moves {
        plant.check_input(u, "policy move")?;
    }
    let mut prop = Propagator::new(plant);
    let pts = grid(problem, schedule);
    let mut x = x0.clone();
    let mut cost = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let u = match schedule.segment_at(0.5 * (a + b)) {
            None => held,
            Some(j) => &policy.moves[j],
        };
        cost += cell_cost(&mut prop, &problem.q1, &problem.q2, &problem.reference, &x, u, a, b)?;
        if problem.state_bounds.is_some() {
            let h = b - a;
            for (node, wt) in GAUSS3 {
                let xs = prop.step(&x, u, node * h)?;
                cost += wt * h * soft_penalty(problem, &xs);
            }
        }
        x = prop.step(&x, u, b - a)?;
    }
    cost += (x.transpose() * &problem.q3 * &x)[0];
    if !cost.is_finite() {
        return Err(MpcError::NonFinite("cost"));
    }
    Ok(cost)
}

#[derive(Debug, Clone)]
struct PenaltyNode {
    weight: f64,
    offset: DVector<f64>,
    map: DMatrix<f64>,
}

/// `J(mu) = mu'H mu + 2 g'mu + c + penalty(mu)` with `mu` the stacked moves.
#[derive(Debug, Clone)]
pub(crate) struct QuadraticCost {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: f64,
    penalty: Vec<PenaltyNode>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl QuadraticCost {
    pub fn build(
        plant: &PlantModel,
        problem: &MpcProblem,
        x0: &DVector<f64>,
        held: &DVector<f64>,
        schedule: &DelaySchedule,
    ) -> Result<Self, MpcError> {
        check_call(plant, problem, x0, held, schedule)?;
        let (n, m) = (plant.states(), plant.inputs());
        let dim = m * schedule.moves();
        let cm = plant.c();
        let mut prop = Propagator::new(plant);
        let mut h = DMatrix::zeros(dim, dim);
        let mut g = DVector::zeros(dim);
        let mut c = 0.0;
        let mut penalty = Vec::new();
        // x = xc + xm * mu along the trajectory.
        let mut xc = x0.clone();
        let mut xm = DMatrix::zeros(n, dim);
        let zero_u = DVector::zeros(m);
        for w in grid(problem, schedule).windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = b - a;
            let (uc, um) = match schedule.segment_at(0.5 * (a + b)) {
                None => (held.clone(), DMatrix::zeros(m, dim)),
                Some(j) => {
                    let mut sel = DMatrix::zeros(m, dim);
                    sel.view_mut((0, j * m), (m, m)).fill_with_identity();
                    (zero_u.clone(), sel)
                }
            };
            let q2um = &problem.q2 * &um;
            for (node, wt) in GAUSS3 {
                let (ad, bd) = prop.matrices(node * len)?.clone();
                let nc = &ad * &xc + &bd * &uc;
                let nm = &ad * &xm + &bd * &um;
                let e0 = problem.reference.value(a + node * len, cm.nrows()) - cm * &nc;
                let y = cm * &nm;
                let q1y = &problem.q1 * &y;
                let k = wt * len;
                h += k * (y.transpose() * &q1y + um.transpose() * &q2um);
                g += k * (um.transpose() * &problem.q2 * &uc - q1y.transpose() * &e0);
                c += k * ((e0.transpose() * &problem.q1 * &e0)[0] + (uc.transpose() * &problem.q2 * &uc)[0]);
                if let Some(sb) = &problem.state_bounds {
                    penalty.push(PenaltyNode {
                        weight: k * sb.weight,
                        offset: nc,
                        map: nm,
                    });
                }
            }
            let (ad, bd) = prop.matrices(len)?.clone();
            xc = &ad * &xc + &bd * &uc;
            xm = &ad * &xm + &bd * &um;
        }
        let q3m = &problem.q3 * &xm;
        h += xm.transpose() * &q3m;
        g += q3m.transpose() * &xc;
        c += (xc.transpose() * &problem.q3 * &xc)[0];
        // Symmetrise against rounding.
        let h = 0.5 * (&h + h.transpose());
        let (lower, upper) = match &problem.state_bounds {
            Some(sb) => (sb.lower.clone(), sb.upper.clone()),
            None => (DVector::zeros(n), DVector::zeros(n)),
        };
        if !h.iter().chain(g.iter()).all(|v| v.is_finite()) || !c.is_finite() {
            return Err(MpcError::NonFinite("cost"));
        }
        Ok(QuadraticCost {
            h,
            g,
            c,
            penalty,
            lower,
            upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    fn violation(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| {
            if x[i] > self.upper[i] {
                x[i] - self.upper[i]
            } else if x[i] < self.lower[i] {
                x[i] - self.lower[i]
            } else {
                0.0
            }
        })
    }

    pub fn value(&self, mu: &DVector<f64>) -> f64 {
        let mut v = (mu.transpose() * (&self.h * mu))[0] + 2.0 * self.g.dot(mu) + self.c;
        for p in &self.penalty {
            let viol = self.violation(&(&p.offset + &p.map * mu));
            v += p.weight * viol.norm_squared();
        }
        v
    }

    pub fn gradient(&self, mu: &DVector<f64>) -> DVector<f64> {
        let mut grad = 2.0 * (&self.h * mu + &self.g);
        for p in &self.penalty {
            let viol = self.violation(&(&p.offset + &p.map * mu));
            if viol.iter().any(|&v| v != 0.0) {
                grad += 2.0 * p.weight * p.map.transpose() * viol;
            }
        }
        grad
    }

    /// Hessian of the quadratic part plus the penalty terms active at `mu`.
    pub fn hessian_at(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let mut hess = 2.0 * &self.h;
        for p in &self.penalty {
            let viol = self.violation(&(&p.offset + &p.map * mu));
            for i in 0..viol.len() {
                if viol[i] != 0.0 {
                    let row = p.map.row(i);
                    hess += 2.0 * p.weight * row.transpose() * row;
                }
            }
        }
        hess
    }

    /// A Hessian bound valid everywhere: every penalty term taken as active.
    pub fn curvature_bound(&self) -> DMatrix<f64> {
        let mut hess = 2.0 * &self.h;
        for p in &self.penalty {
            hess += 2.0 * p.weight * p.map.transpose() * &p.map;
        }
        hess
    }
}

/// Gradient of the cost with respect to the stacked moves.
pub fn cost_gradient(
    plant: &PlantModel,
    problem: &MpcProblem,
    x0: &DVector<f64>,
    held: &DVector<f64>,
    policy: &ControlPolicy,
    schedule: &DelaySchedule,
) -> Result<DVector<f64>, MpcError> {
    let q = QuadraticCost::build(plant, problem, x0, held, schedule)?;
    let mu = policy.stacked();
    if mu.len() != q.dim() {
        return Err(MpcError::Dimension(format!(
            "policy has {} entries, expected {}",
            mu.len(),
            q.dim()
        )));
    }
    Ok(q.gradient(&mu))
}
