//! Actor side of the algorithm: off-policy value and gradient estimates over a
//! replay window, recursive averaging, quadratic surrogates and the convex
//! subproblems that produce the next policy iterate.

mod estimate;
mod solver;
mod storage;
mod surrogate;

pub use estimate::{
    estimate_gradient, estimate_gradient_mc, estimate_gradients, estimate_value, estimate_values,
    recursive_average, recursive_average_vec,
};
pub use solver::{
    mix_theta, solve_actor_step, solve_feasibility_subproblem, solve_objective_subproblem, Branch,
    SolverOptions, SubproblemSolution,
};
pub use storage::{ReplayStorage, WindowPolicy};
pub use surrogate::{Surrogate, SurrogateState};
