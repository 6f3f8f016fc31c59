//! Model predictive control over a horizon whose input switching instants
//! come from predicted network delays.

mod cost;
mod delays;
mod plant;
mod problem;
mod solver;

pub use cost::{cell_cost, cost_gradient, evaluate_cost, Propagator, GAUSS3};
pub use delays::{delay_schedule, predict_delays, PredictedInstance};
pub use plant::{discretize_segment, PlantModel};
pub use problem::{
    quadrature_grid, ControlPolicy, DelaySchedule, MpcProblem, Reference, SolverOptions, StateBounds, QUADRATURE_STEP,
};
pub use solver::{apply_first_move, solve_mpc, solve_mpc_from, FirstMove, MpcSolution};
