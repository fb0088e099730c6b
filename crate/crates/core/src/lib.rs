//! Bandwidth-constrained sensor scheduling with a tunable fairness/efficiency trade-off.
//!
//! `N` independent linear systems each run a local Kalman filter and forward
//! their estimates to a remote estimator over a shared channel. When a sensor
//! stays silent for `τ` steps the remote error covariance is `h^(τ)(P̄)`, so all
//! costs are functions of the open-loop trace sequence `Tr h^(j)(P̄)`.
//!
//! Per-sensor costs `J_i` are aggregated with `f_q(x) = x^(1+q)/(1+q)`; `q = 0`
//! is pure efficiency and larger `q` pushes the schedule toward min-max fairness.
//!
//! - [`estimation`]: system model, steady-state covariance, open-loop traces, `f_q`.
//! - [`rate`]: rate-constrained allocation via the augmented primal-dual subgradient method.
//! - [`mdp`]: activation-constrained scheduling as an average-cost MDP.
//! - [`greedy`]: the per-step greedy heuristic.
//! - [`harness`]: exact schedule evaluation, fairness metrics, bounds and oracles.

pub mod estimation;
pub mod greedy;
pub mod harness;
pub mod mdp;
pub mod rate;
pub mod systems;

pub use estimation::{
    fair_cost, lyapunov_step, measurement_update, open_loop_trace, spectral_radius, steady_state,
    EstimationError, FairnessParam, SteadyStateCache, SystemModel,
};
