//! Rate-constrained scheduling.
//!
//! For a single sensor with long-run transmission rate `r`, the optimal policy
//! is a randomized threshold rule on the holding time, and its cost is
//! piecewise linear in `r`:
//!
//! ```text
//! J̃(r) = (1 − rβ)·Tr h^(β)(P̄) + r·Σ_{j<β} Tr h^(j)(P̄),   β = ⌊1/r⌋
//! ```
//!
//! The multi-sensor problem `min Σ f_q(J̃_i(r_i))` s.t. `Σ r_i ≤ R`,
//! `r̲_i ≤ r_i ≤ 1` is solved with an augmented primal-dual subgradient method
//! using normalized steps `w(t) = γ(t)/‖T(r, ν)‖₂`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::estimation::{spectral_radius, EstimationError, FairnessParam, SteadyStateCache, SystemModel};

/// Guard added inside `⌊1/r⌋` so exact reciprocals of integers land on the right piece.
pub const FLOOR_GUARD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("rate must lie in (0, 1], got {0}")]
    InvalidRate(f64),

    #[error("rate budget must be positive and finite, got {0}")]
    InvalidBudget(f64),

    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),

    #[error("lower rate bounds sum to {lower_sum}, exceeding the budget {budget}")]
    Infeasible { lower_sum: f64, budget: f64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("no sensors")]
    Empty,

    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

pub type Result<T> = std::result::Result<T, RateError>;

fn check_rate(r: f64) -> Result<()> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(RateError::InvalidRate(r));
    }
    Ok(())
}

/// `β = ⌊1/r⌋`: the holding time at which the threshold policy is forced to transmit.
pub fn breakpoint(r: f64) -> usize {
    (1.0 / r + FLOOR_GUARD).floor() as usize
}

/// `J̃(r)`, the optimal long-run average trace of one sensor at rate `r`.
pub fn rate_cost(r: f64, cache: &SteadyStateCache) -> Result<f64> {
    check_rate(r)?;
    let beta = breakpoint(r);
    let (at_beta, head) = cache.trace_and_prefix(beta)?;
    Ok((1.0 - r * beta as f64) * at_beta + r * head)
}

/// Slope of `J̃` on the linear piece containing `r`: `Σ_{j<β} Tr h^(j) − β·Tr h^(β)`.
pub fn rate_cost_slope(r: f64, cache: &SteadyStateCache) -> Result<f64> {
    check_rate(r)?;
    let beta = breakpoint(r);
    let (at_beta, head) = cache.trace_and_prefix(beta)?;
    Ok(head - beta as f64 * at_beta)
}

/// `lim_{r→0⁺} J̃(r)`: the open-loop steady-state trace of a stable plant.
///
/// `None` for unstable plants and when the trace sequence has not settled within the cap.
pub fn rate_cost_limit(cache: &SteadyStateCache) -> Result<Option<f64>> {
    if !cache.is_stable() {
        return Ok(None);
    }
    let last = cache.trace(cache.cap() - 1)?;
    let prev = cache.trace(cache.cap() - 2)?;
    Ok(((last - prev).abs() <= 1e-12 * last.abs()).then_some(last))
}

/// Randomized threshold rule: silent while `τ < η`, transmit w.p. `p` at `τ = η`,
/// always transmit once `τ > η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    pub eta: usize,
    pub p: f64,
}

impl ThresholdPolicy {
    /// Long-run transmission rate `1/(η + 2 − p)`.
    pub fn rate(&self) -> f64 {
        1.0 / (self.eta as f64 + 2.0 - self.p)
    }
}

pub fn threshold_from_rate(r: f64) -> Result<ThresholdPolicy> {
    check_rate(r)?;
    let inv = 1.0 / r;
    let eta = (inv - 1.0 + FLOOR_GUARD).floor().max(0.0) as usize;
    let p = (eta as f64 + 2.0 - inv).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(ThresholdPolicy { eta, p })
}

/// Draws a transmission sequence `ζ_0, …, ζ_{horizon-1}` from `policy`.
///
/// The holding time starts at zero (the estimator is synchronized at `k = -1`).
pub fn realize_threshold_schedule(policy: ThresholdPolicy, horizon: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tau = 0usize;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        // `tau` is the holding state entering this step.
        let transmit = match tau.cmp(&policy.eta) {
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => policy.p >= 1.0 || rng.random::<f64>() < policy.p,
            std::cmp::Ordering::Greater => true,
        };
        tau = if transmit { 0 } else { tau + 1 };
        out.push(transmit);
    }
    out
}

/// Rates `r̃`, one per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector(pub Vec<f64>);

impl RateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Multipliers for the `2N + 1` rows of the constraint system.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector(pub Vec<f64>);

impl DualVector {
    pub fn zeros(rows: usize) -> Self {
        Self(vec![0.0; rows])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `𝒜 r ≤ b` with `𝒜 = [1ᵀ; I; −I]` and `b = [R; 1; −r̲]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub a_con: DMatrix<f64>,
    pub b_con: DVector<f64>,
    pub r_total: f64,
    pub r_lower: Vec<f64>,
}

/// `r̲ = 0` for stable plants and `ε` otherwise, which keeps subgradients bounded.
pub fn lower_rate_bound(rho_a: f64, epsilon: f64) -> f64 {
    if rho_a < 1.0 {
        0.0
    } else {
        epsilon
    }
}

pub fn build_constraints(models: &[SystemModel], r_total: f64, epsilon: f64) -> Result<ConstraintSystem> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(RateError::InvalidEpsilon(epsilon));
    }
    let lower = models
        .iter()
        .map(|m| lower_rate_bound(spectral_radius(&m.a), epsilon))
        .collect();
    ConstraintSystem::new(r_total, lower)
}

impl ConstraintSystem {
    pub fn new(r_total: f64, r_lower: Vec<f64>) -> Result<Self> {
        if !(r_total > 0.0 && r_total.is_finite()) {
            return Err(RateError::InvalidBudget(r_total));
        }
        if r_lower.is_empty() {
            return Err(RateError::Empty);
        }
        let n = r_lower.len();
        let mut a_con = DMatrix::zeros(2 * n + 1, n);
        let mut b_con = DVector::zeros(2 * n + 1);
        b_con[0] = r_total;
        for i in 0..n {
            a_con[(0, i)] = 1.0;
            a_con[(1 + i, i)] = 1.0;
            a_con[(1 + n + i, i)] = -1.0;
            b_con[1 + i] = 1.0;
            b_con[1 + n + i] = -r_lower[i];
        }
        Ok(Self {
            a_con,
            b_con,
            r_total,
            r_lower,
        })
    }

    pub fn sensors(&self) -> usize {
        self.r_lower.len()
    }

    /// `𝒜 r − b`.
    pub fn residual(&self, r: &[f64]) -> DVector<f64> {
        &self.a_con * DVector::from_column_slice(r) - &self.b_con
    }

    /// `‖(𝒜 r − b)₊‖₂`.
    pub fn violation(&self, r: &[f64]) -> f64 {
        self.residual(r).map(|v| v.max(0.0)).norm()
    }

    /// Euclidean projection onto `{Σr ≤ R, lo ≤ r ≤ 1}` for the given lower bounds.
    pub fn project(&self, r: &[f64], lower: &[f64]) -> Vec<f64> {
        let clamp = |shift: f64| -> Vec<f64> {
            r.iter()
                .zip(lower)
                .map(|(&v, &lo)| (v - shift).clamp(lo, 1.0))
                .collect()
        };
        let boxed = clamp(0.0);
        if boxed.iter().sum::<f64>() <= self.r_total {
            return boxed;
        }
        let (mut lo, mut hi) = (0.0, r.iter().fold(0.0f64, |m, &v| m.max(v.abs())) + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if clamp(mid).iter().sum::<f64>() > self.r_total {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.max(1.0) {
                break;
            }
        }
        clamp(hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Weight of the augmented penalty `α/2·‖(𝒜r − b)₊‖²`.
    pub alpha: f64,
    /// Step-size scale in `γ(t) = gamma0 / t^step_exponent`.
    pub gamma0: f64,
    /// Exponent in `(0.5, 1]` so that `Σγ = ∞` and `Σγ² < ∞`.
    pub step_exponent: f64,
    pub max_iter: usize,
    pub tol_violation: f64,
    /// Relative improvement of the best objective over the last tenth of the
    /// run below which the run counts as converged.
    pub tol_objective: f64,
    /// Lower rate bound for unstable plants.
    pub epsilon: f64,
    /// Step along the subgradient of `‖J̃‖_{1+q}` (same minimizers as `g`),
    /// divided by its magnitude at the equal-share point.
    pub normalize_objective: bool,
    /// Keep every `trace_stride`-th iteration in the convergence trace.
    pub trace_stride: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            gamma0: 1.0,
            step_exponent: 0.75,
            max_iter: 100_000,
            tol_violation: 1e-6,
            tol_objective: 1e-4,
            epsilon: 1e-3,
            normalize_objective: true,
            trace_stride: 1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(RateError::InvalidConfig("alpha must be positive"));
        }
        if !(self.gamma0 > 0.0) {
            return Err(RateError::InvalidConfig("gamma0 must be positive"));
        }
        if !(self.step_exponent > 0.5 && self.step_exponent <= 1.0) {
            return Err(RateError::InvalidConfig("step_exponent must lie in (0.5, 1]"));
        }
        if self.max_iter == 0 {
            return Err(RateError::InvalidConfig("max_iter must be positive"));
        }
        if !(self.tol_violation >= 0.0) || !(self.tol_objective >= 0.0) {
            return Err(RateError::InvalidConfig("tolerances must be nonnegative"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(RateError::InvalidEpsilon(self.epsilon));
        }
        Ok(())
    }

    /// `γ(t)`.
    pub fn step_scale(&self, t: usize) -> f64 {
        self.gamma0 / (t as f64).powf(self.step_exponent)
    }
}

/// `κ_i = J̃_i(r_i)^q · [Σ_{j<β_i} Tr h^(j) − β_i·Tr h^(β_i)]`, a subgradient of `g`.
pub fn subgradient(r: &RateVector, caches: &[SteadyStateCache], fp: FairnessParam) -> Result<Vec<f64>> {
    if r.len() != caches.len() {
        return Err(RateError::LengthMismatch {
            expected: caches.len(),
            actual: r.len(),
        });
    }
    r.0.iter()
        .zip(caches)
        .map(|(&ri, cache)| {
            let cost = rate_cost(ri, cache)?;
            let slope = rate_cost_slope(ri, cache)?;
            let k = fp.derivative(cost) * slope;
            if !k.is_finite() {
                return Err(EstimationError::NonFiniteTrace { index: breakpoint(ri) }.into());
            }
            Ok(k)
        })
        .collect()
}

/// Subgradient of `‖J̃(r)‖_{1+q} = ((1+q)·g(r))^{1/(1+q)}`.
///
/// The map is increasing in `g`, so it has the same minimizers, and it is
/// homogeneous of degree one in the per-sensor costs, so its subgradient
/// `(J̃_i/‖J̃‖)^q · slope_i` stays bounded by `|slope_i|` for every `q`.
pub fn normalized_subgradient(
    r: &RateVector,
    caches: &[SteadyStateCache],
    fp: FairnessParam,
) -> Result<Vec<f64>> {
    if r.len() != caches.len() {
        return Err(RateError::LengthMismatch {
            expected: caches.len(),
            actual: r.len(),
        });
    }
    let costs = r
        .0
        .iter()
        .zip(caches)
        .map(|(&ri, cache)| rate_cost(ri, cache))
        .collect::<Result<Vec<f64>>>()?;
    let q = fp.q();
    let peak = costs.iter().fold(0.0f64, |m, &c| m.max(c));
    let norm = if peak > 0.0 {
        peak * costs
            .iter()
            .map(|c| (c / peak).powf(1.0 + q))
            .sum::<f64>()
            .powf(1.0 / (1.0 + q))
    } else {
        0.0
    };
    r.0.iter()
        .zip(caches)
        .zip(&costs)
        .map(|((&ri, cache), &cost)| {
            let slope = rate_cost_slope(ri, cache)?;
            let weight = if norm > 0.0 { (cost / norm).powf(q) } else { 0.0 };
            Ok(weight * slope)
        })
        .collect()
}

/// `g(r) = Σ f_q(J̃_i(r_i))`.
pub fn rate_objective(r: &[f64], caches: &[SteadyStateCache], fp: FairnessParam) -> Result<f64> {
    r.iter()
        .zip(caches)
        .map(|(&ri, cache)| Ok(fp.apply(rate_cost(ri, cache)?)))
        .sum()
}

/// Magnitude above which `f_q(J̃)` or its subgradient is treated as numerically unusable.
const OVERFLOW_GUARD: f64 = 1e200;

/// Smallest rate `≥ lower` at which `J̃`, `f_q(J̃)` and `κ` are all representable.
///
/// Rates are scanned on the breakpoints `1/β`. The trace cap bounds `β`, which
/// matters for stable plants whose formal lower bound is zero.
pub fn safe_rate_floor(lower: f64, cache: &SteadyStateCache, fp: FairnessParam) -> Result<f64> {
    let beta_cap = cache.cap() - 1;
    let beta_max = if lower > 0.0 {
        breakpoint(lower).min(beta_cap)
    } else {
        beta_cap
    };
    let floor = lower.max(1.0 / beta_max as f64);
    let usable = |r: f64| -> bool {
        match (rate_cost(r, cache), rate_cost_slope(r, cache)) {
            (Ok(cost), Ok(slope)) => {
                let value = fp.apply(cost);
                let kappa = fp.derivative(cost) * slope;
                value.is_finite() && value < OVERFLOW_GUARD && kappa.abs() < OVERFLOW_GUARD
            }
            _ => false,
        }
    };
    if usable(floor) {
        return Ok(floor);
    }
    // Usability is monotone in β; bisect for the largest usable breakpoint.
    let (mut good, mut bad) = (1usize, beta_max);
    if !usable(1.0) {
        return Err(EstimationError::NonFiniteTrace { index: 1 }.into());
    }
    while bad - good > 1 {
        let mid = (good + bad) / 2;
        if usable(1.0 / mid as f64) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(1.0 / good as f64)
}

/// Everything the iteration needs besides the iterate itself.
#[derive(Debug, Clone)]
pub struct RateProblem<'a> {
    pub caches: &'a [SteadyStateCache],
    pub constraints: ConstraintSystem,
    pub fp: FairnessParam,
    /// Box floor used when iterating: `r̲_i` raised to [`safe_rate_floor`].
    pub eval_lower: Vec<f64>,
    /// Positive constant the objective is divided by inside the iteration.
    pub objective_scale: f64,
}

impl<'a> RateProblem<'a> {
    pub fn new(
        caches: &'a [SteadyStateCache],
        r_total: f64,
        fp: FairnessParam,
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(RateError::InvalidEpsilon(epsilon));
        }
        let lower = caches
            .iter()
            .map(|c| lower_rate_bound(c.rho_a(), epsilon))
            .collect();
        let constraints = ConstraintSystem::new(r_total, lower)?;
        let eval_lower = constraints
            .r_lower
            .iter()
            .zip(caches)
            .map(|(&lo, c)| safe_rate_floor(lo, c, fp))
            .collect::<Result<Vec<f64>>>()?;
        let lower_sum: f64 = eval_lower.iter().sum();
        if lower_sum > r_total {
            return Err(RateError::Infeasible {
                lower_sum,
                budget: r_total,
            });
        }
        Ok(Self {
            caches,
            constraints,
            fp,
            eval_lower,
            objective_scale: 1.0,
        })
    }

    pub fn objective(&self, r: &[f64]) -> Result<f64> {
        rate_objective(r, self.caches, self.fp)
    }

    pub fn clamp(&self, r: &mut [f64]) {
        for (v, &lo) in r.iter_mut().zip(&self.eval_lower) {
            *v = v.clamp(lo, 1.0);
        }
    }

    pub fn project(&self, r: &[f64]) -> Vec<f64> {
        self.constraints.project(r, &self.eval_lower)
    }
}

/// Diagnostics from one primal-dual update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// `w(t) = γ(t)/‖T‖₂`; zero when the mapping vanished.
    pub step_size: f64,
    pub mapping_norm: f64,
}

/// One update `z ← z − w(t)·T(z)` with `z = (r, ν)`, then `r` is clamped to its
/// box and `ν` projected onto `ν ≥ 0`.
///
/// `T(r, ν) = [∂g + 𝒜ᵀν + α𝒜ᵀ(𝒜r − b)₊ ; b − 𝒜r]`, so the dual block moves by
/// `+w·(𝒜r − b)`.
pub fn primal_dual_step(
    r: &RateVector,
    nu: &DualVector,
    t: usize,
    cfg: &SolverConfig,
    problem: &RateProblem<'_>,
) -> Result<(RateVector, DualVector, StepInfo)> {
    let n = problem.constraints.sensors();
    let rows = 2 * n + 1;
    if r.len() != n {
        return Err(RateError::LengthMismatch {
            expected: n,
            actual: r.len(),
        });
    }
    if nu.0.len() != rows {
        return Err(RateError::LengthMismatch {
            expected: rows,
            actual: nu.0.len(),
        });
    }
    let t = t.max(1);
    let con = &problem.constraints;
    let kappa = if cfg.normalize_objective {
        normalized_subgradient(r, problem.caches, problem.fp)?
    } else {
        subgradient(r, problem.caches, problem.fp)?
    };
    let residual = con.residual(&r.0);
    let positive = residual.map(|v| v.max(0.0));
    let nu_vec = DVector::from_column_slice(&nu.0);
    let at = con.a_con.transpose();
    let primal = DVector::from_iterator(n, kappa.iter().map(|k| k / problem.objective_scale))
        + &at * &nu_vec
        + (&at * &positive) * cfg.alpha;
    let dual = -residual;
    // Scale before squaring: subgradients near the floor of an unstable plant
    // can exceed 1e154.
    let peak = primal.amax().max(dual.amax());
    let norm = if peak > 0.0 {
        peak * ((primal.unscale(peak)).norm_squared() + (dual.unscale(peak)).norm_squared()).sqrt()
    } else {
        0.0
    };
    if !norm.is_finite() {
        return Err(EstimationError::NonFiniteTrace { index: 0 }.into());
    }
    if norm == 0.0 {
        return Ok((
            r.clone(),
            nu.clone(),
            StepInfo {
                step_size: 0.0,
                mapping_norm: 0.0,
            },
        ));
    }
    let w = cfg.step_scale(t) / norm;
    let mut next_r: Vec<f64> = r.0.iter().zip(primal.iter()).map(|(v, g)| v - w * g).collect();
    problem.clamp(&mut next_r);
    let next_nu = nu
        .0
        .iter()
        .zip(dual.iter())
        .map(|(v, d)| (v - w * d).max(0.0))
        .collect();
    Ok((
        RateVector(next_r),
        DualVector(next_nu),
        StepInfo {
            step_size: w,
            mapping_norm: norm,
        },
    ))
}

/// One row of the exported convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub violation_norm: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone)]
pub struct RateSolution {
    /// Best feasible allocation seen (projection of the iterates onto the feasible set).
    pub rates: RateVector,
    pub objective: f64,
    pub violation: f64,
    /// Last raw iterate of the primal-dual recursion.
    pub final_iterate: RateVector,
    pub final_dual: DualVector,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

impl RateSolution {
    pub fn per_sensor_costs(&self, caches: &[SteadyStateCache]) -> Result<Vec<f64>> {
        self.rates
            .0
            .iter()
            .zip(caches)
            .map(|(&r, c)| rate_cost(r, c))
            .collect()
    }

    pub fn policies(&self) -> Result<Vec<ThresholdPolicy>> {
        self.rates.0.iter().map(|&r| threshold_from_rate(r)).collect()
    }
}

/// Runs the primal-dual recursion from a seeded random start.
///
/// Each iterate is also projected onto the feasible set and the best projected
/// point is returned, so the reported allocation always satisfies the budget.
pub fn solve_rate_allocation(
    caches: &[SteadyStateCache],
    r_total: f64,
    fp: FairnessParam,
    cfg: &SolverConfig,
) -> Result<RateSolution> {
    cfg.validate()?;
    if caches.is_empty() {
        return Err(RateError::Empty);
    }
    let mut problem = RateProblem::new(caches, r_total, fp, cfg.epsilon)?;
    let n = caches.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut r = RateVector(
        problem
            .eval_lower
            .iter()
            .map(|&lo| rng.random_range(lo..=1.0))
            .collect(),
    );
    let mut nu = DualVector((0..2 * n + 1).map(|_| rng.random::<f64>()).collect());

    if cfg.normalize_objective {
        let share = r_total / n as f64;
        let start = problem.project(&vec![share; n]);
        let scale = normalized_subgradient(&RateVector(start), caches, fp)?
            .iter()
            .fold(0.0f64, |m, k| m.max(k.abs()));
        if scale.is_finite() && scale > 0.0 {
            problem.objective_scale = scale;
        }
    }

    let mut best_rates = problem.project(&r.0);
    let mut best = problem.objective(&best_rates)?;
    let stride = cfg.trace_stride.max(1);
    let mut trace = Vec::with_capacity(cfg.max_iter / stride + 1);
    let tail_start = cfg.max_iter - cfg.max_iter / 10;
    let mut best_at_tail_start = best;

    for t in 1..=cfg.max_iter {
        let (next_r, next_nu, info) = primal_dual_step(&r, &nu, t, cfg, &problem)?;
        r = next_r;
        nu = next_nu;
        let candidate = problem.project(&r.0);
        let value = problem.objective(&candidate)?;
        if value < best {
            best = value;
            best_rates = candidate;
        }
        if t % stride == 0 || t == cfg.max_iter {
            trace.push(IterationRecord {
                iter: t,
                objective: problem.objective(&r.0)?,
                violation_norm: problem.constraints.violation(&r.0),
                step_size: info.step_size,
            });
        }
        if t == tail_start {
            best_at_tail_start = best;
        }
        if info.step_size == 0.0 {
            break;
        }
    }

    let violation = problem.constraints.violation(&best_rates);
    let tail_gain = (best_at_tail_start - best) / best.abs().max(f64::MIN_POSITIVE);
    let converged = violation <= cfg.tol_violation && tail_gain <= cfg.tol_objective;
    Ok(RateSolution {
        rates: RateVector(best_rates),
        objective: best,
        violation,
        final_iterate: r,
        final_dual: nu,
        iterations: cfg.max_iter,
        converged,
        trace,
    })
}
