//! Exact schedule evaluation, fairness measures, lower bounds and the
//! brute-force oracles used to check the solvers on small instances.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::estimation::{EstimationError, FairnessParam, SteadyStateCache, SystemModel};
use crate::mdp::{enumerate_actions, ActionMask, MdpError};
use crate::rate::{
    lower_rate_bound, rate_cost, rate_cost_limit, realize_threshold_schedule, solve_rate_allocation, RateError,
    SolverConfig, ThresholdPolicy,
};

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("schedule is empty")]
    EmptySchedule,
    #[error("periodic schedule has an empty cycle")]
    EmptyCycle,
    #[error("step {step} has {actual} entries, expected {expected}")]
    DimensionMismatch {
        step: usize,
        expected: usize,
        actual: usize,
    },
    #[error("step {step} activates {active} sensors, budget is {budget}")]
    OverBudget {
        step: usize,
        active: usize,
        budget: usize,
    },
    #[error("entropy needs finite positive costs, got {0}")]
    InvalidCost(f64),
    #[error("sensor {sensor} never transmits, segments are undefined")]
    NoTransmission { sensor: usize },
    #[error("horizon {horizon} needs a schedule of at least {needed} steps, got {actual}")]
    ShortSchedule {
        horizon: usize,
        needed: usize,
        actual: usize,
    },
    #[error("rate solver did not converge (violation {violation:e})")]
    SolverNotConverged { violation: f64 },
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("grid step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("need at least {min} trials, got {actual}")]
    TooFewTrials { min: usize, actual: usize },
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Transmission masks for steps `0..len`.
    Explicit(Vec<ActionMask>),
    /// `prefix` once, then `cycle` forever.
    Periodic {
        prefix: Vec<ActionMask>,
        cycle: Vec<ActionMask>,
    },
}

impl Schedule {
    /// Periodic form when `period = Some((M, L))`, explicit otherwise.
    pub fn from_sequence(actions: &[ActionMask], period: Option<(usize, usize)>) -> Self {
        match period {
            Some((m, l)) if l > 0 && m + l <= actions.len() => Schedule::Periodic {
                prefix: actions[..m].to_vec(),
                cycle: actions[m..m + l].to_vec(),
            },
            _ => Schedule::Explicit(actions.to_vec()),
        }
    }

    pub fn from_bits(rows: &[Vec<bool>]) -> Self {
        Schedule::Explicit(rows.iter().map(|r| ActionMask::from_bits(r.clone())).collect())
    }

    fn steps(&self) -> impl Iterator<Item = &ActionMask> {
        let (a, b): (&[ActionMask], &[ActionMask]) = match self {
            Schedule::Explicit(s) => (s, &[]),
            Schedule::Periodic { prefix, cycle } => (prefix, cycle),
        };
        a.iter().chain(b)
    }

    /// Checks widths against `n` and, when given, the activation budget.
    pub fn validate(&self, n: usize, budget: Option<usize>) -> Result<()> {
        match self {
            Schedule::Explicit(s) if s.is_empty() => return Err(HarnessError::EmptySchedule),
            Schedule::Periodic { cycle, .. } if cycle.is_empty() => {
                return Err(HarnessError::EmptyCycle)
            }
            _ => {}
        }
        for (step, a) in self.steps().enumerate() {
            if a.len() != n {
                return Err(HarnessError::DimensionMismatch {
                    step,
                    expected: n,
                    actual: a.len(),
                });
            }
            if let Some(budget) = budget {
                let active = a.active_count();
                if active > budget {
                    return Err(HarnessError::OverBudget {
                        step,
                        active,
                        budget,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn period(&self) -> Option<(usize, usize)> {
        match self {
            Schedule::Explicit(_) => None,
            Schedule::Periodic { prefix, cycle } => Some((prefix.len(), cycle.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// Long-run average trace per sensor; `∞` for a diverging sensor.
    pub per_sensor_j: Vec<f64>,
    pub total_cost: f64,
    /// `Σ f_q(J_i)`.
    pub q_objective: f64,
    /// `NaN` when some sensor diverges.
    pub entropy_bits: f64,
    /// `g(r̃*)` with `R = Z`, once attached.
    pub gap_lower_bound: Option<f64>,
    /// `q_objective / g(r̃*)`.
    pub relative_performance: Option<f64>,
    /// Unstable sensors that never transmit in the cycle.
    pub diverging: Vec<usize>,
    pub period: Option<(usize, usize)>,
}

impl CostReport {
    pub fn from_costs(per_sensor_j: Vec<f64>, fp: FairnessParam) -> Self {
        let diverging: Vec<usize> = per_sensor_j
            .iter()
            .enumerate()
            .filter(|(_, j)| !j.is_finite())
            .map(|(i, _)| i)
            .collect();
        let total_cost = per_sensor_j.iter().sum();
        let q_objective = per_sensor_j.iter().map(|&j| fp.apply(j)).sum();
        let entropy_bits = entropy_measure(&per_sensor_j).unwrap_or(f64::NAN);
        Self {
            per_sensor_j,
            total_cost,
            q_objective,
            entropy_bits,
            gap_lower_bound: None,
            relative_performance: None,
            diverging,
            period: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.diverging.is_empty()
    }

    pub fn attach_gap(&mut self, g_star: f64) {
        self.gap_lower_bound = Some(g_star);
        self.relative_performance = Some(self.q_objective / g_star);
    }

    /// Row matching [`report_csv_header`].
    pub fn csv_row(&self, method: &str, q: f64) -> String {
        let mut out = format!("{method},{q}");
        for j in &self.per_sensor_j {
            let _ = write!(out, ",{j}");
        }
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let (m, l) = match self.period {
            Some((m, l)) => (m.to_string(), l.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = write!(
            out,
            ",{},{},{},{},{},{m},{l}",
            self.total_cost,
            self.entropy_bits,
            self.q_objective,
            opt(self.gap_lower_bound),
            opt(self.relative_performance)
        );
        out
    }
}

pub fn report_csv_header(n: usize) -> String {
    let mut out = String::from("method,q");
    for i in 1..=n {
        let _ = write!(out, ",J_{i}");
    }
    out.push_str(",total,entropy_bits,q_objective,g_star,ratio,period_M,period_L");
    out
}

/// Trace at holding time `tau`, falling back to the open-loop limit for a
/// stable plant whose holding time outruns the trace cap.
fn trace_at(cache: &SteadyStateCache, tau: usize) -> Result<f64> {
    if tau >= cache.cap() && cache.is_stable() {
        return Ok(cache.trace(cache.cap() - 1)?);
    }
    Ok(cache.trace(tau)?)
}

fn is_divergence(e: &EstimationError) -> bool {
    matches!(
        e,
        EstimationError::NonFiniteTrace { .. } | EstimationError::TraceCapExceeded { .. }
    )
}

fn explicit_average(steps: &[ActionMask], i: usize, cache: &SteadyStateCache) -> Result<f64> {
    let mut tau = 0usize;
    let mut sum = 0.0;
    for a in steps {
        tau = if a.is_active(i) { 0 } else { tau + 1 };
        match trace_at(cache, tau) {
            Ok(t) => sum += t,
            Err(HarnessError::Estimation(e)) if is_divergence(&e) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    let avg = sum / steps.len() as f64;
    Ok(if avg.is_finite() { avg } else { f64::INFINITY })
}

fn cycle_average(
    prefix: &[ActionMask],
    cycle: &[ActionMask],
    i: usize,
    cache: &SteadyStateCache,
) -> Result<f64> {
    if !cycle.iter().any(|a| a.is_active(i)) {
        return if cache.is_stable() {
            trace_at(cache, usize::MAX)
        } else {
            Ok(f64::INFINITY)
        };
    }
    let mut tau = 0usize;
    for a in prefix.iter().chain(cycle) {
        tau = if a.is_active(i) { 0 } else { tau + 1 };
    }
    let mut sum = 0.0;
    for a in cycle {
        tau = if a.is_active(i) { 0 } else { tau + 1 };
        sum += trace_at(cache, tau)?;
    }
    Ok(sum / cycle.len() as f64)
}

/// Long-run per-sensor costs: the exact cycle average for periodic schedules
/// and the horizon average for explicit ones. The holding time is zero
/// before step 0.
pub fn evaluate_schedule(
    schedule: &Schedule,
    caches: &[SteadyStateCache],
    fp: FairnessParam,
) -> Result<CostReport> {
    schedule.validate(caches.len(), None)?;
    let per_sensor_j = caches
        .par_iter()
        .enumerate()
        .map(|(i, cache)| match schedule {
            Schedule::Explicit(steps) => explicit_average(steps, i, cache),
            Schedule::Periodic { prefix, cycle } => cycle_average(prefix, cycle, i, cache),
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut report = CostReport::from_costs(per_sensor_j, fp);
    report.period = schedule.period();
    Ok(report)
}

/// `−Σ p_i log₂ p_i` with `p_i = J_i / ΣJ`.
pub fn entropy_measure(per_sensor_j: &[f64]) -> Result<f64> {
    if let Some(&bad) = per_sensor_j.iter().find(|j| !(j.is_finite() && **j > 0.0)) {
        return Err(HarnessError::InvalidCost(bad));
    }
    let total: f64 = per_sensor_j.iter().sum();
    let h: f64 = per_sensor_j
        .iter()
        .map(|j| {
            let p = j / total;
            -p * p.log2()
        })
        .sum();
    // a single sensor gives -0.0
    Ok(h + 0.0)
}

/// Per-sensor segments between transmissions.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSegments {
    /// Transmission times `s_j`.
    pub starts: Vec<usize>,
    /// `d_j = s_{j+1} − s_j`, and `T − s_last` for the last segment.
    pub lengths: Vec<usize>,
    /// Mean trace `ϱ_j` over each segment; `NaN` for an empty last segment.
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDecomposition {
    pub horizon: usize,
    pub sensors: Vec<SensorSegments>,
}

/// Splits steps `0..=horizon` of an explicit schedule at each sensor's transmissions.
pub fn segment_decomposition(
    steps: &[ActionMask],
    caches: &[SteadyStateCache],
    horizon: usize,
) -> Result<SegmentDecomposition> {
    if steps.len() < horizon + 1 {
        return Err(HarnessError::ShortSchedule {
            horizon,
            needed: horizon + 1,
            actual: steps.len(),
        });
    }
    Schedule::Explicit(steps[..=horizon].to_vec()).validate(caches.len(), None)?;
    let sensors = caches
        .iter()
        .enumerate()
        .map(|(i, cache)| {
            let starts: Vec<usize> = (0..=horizon).filter(|&k| steps[k].is_active(i)).collect();
            if starts.is_empty() {
                return Err(HarnessError::NoTransmission { sensor: i });
            }
            let mut lengths = Vec::with_capacity(starts.len());
            let mut means = Vec::with_capacity(starts.len());
            for (j, &s) in starts.iter().enumerate() {
                let d = starts.get(j + 1).map_or(horizon - s, |&next| next - s);
                lengths.push(d);
                if d == 0 {
                    means.push(f64::NAN);
                } else {
                    let (last, head) = cache.trace_and_prefix(d - 1)?;
                    means.push((head + last) / d as f64);
                }
            }
            Ok(SensorSegments {
                starts,
                lengths,
                means,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SegmentDecomposition { horizon, sensors })
}

/// `(1/(T+1)) Σ_i Σ_j d_j f_q(ϱ_j)`.
pub fn segment_objective(
    steps: &[ActionMask],
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    horizon: usize,
) -> Result<f64> {
    let dec = segment_decomposition(steps, caches, horizon)?;
    let total: f64 = dec
        .sensors
        .iter()
        .flat_map(|s| s.lengths.iter().zip(&s.means))
        .filter(|(&d, _)| d > 0)
        .map(|(&d, &m)| d as f64 * fp.apply(m))
        .sum();
    Ok(total / (horizon + 1) as f64)
}

/// `g(r̃*)` with `R = Z`; errors if the rate solver did not converge.
pub fn rate_lower_bound(
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    z: usize,
    cfg: &SolverConfig,
) -> Result<f64> {
    let sol = solve_rate_allocation(caches, z as f64, fp, cfg)?;
    if !sol.converged {
        return Err(HarnessError::SolverNotConverged {
            violation: sol.violation,
        });
    }
    Ok(sol.objective)
}

/// `(g(r̃*), q_objective / g(r̃*))`.
pub fn gap_bounds(
    report: &CostReport,
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    z: usize,
    cfg: &SolverConfig,
) -> Result<(f64, f64)> {
    let g_star = rate_lower_bound(caches, fp, z, cfg)?;
    Ok((g_star, report.q_objective / g_star))
}

/// Criterion minimized by [`brute_force_periodic_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleObjective {
    /// `Σ_i f_q(J_i)` of the cycle averages.
    Exact,
    /// Cycle average of `Σ d·f_q(ϱ)` over inter-transmission segments, the
    /// quantity the MDP's stage cost accumulates.
    Segmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub cycle: Vec<ActionMask>,
}

pub const ORACLE_MAX_SENSORS: usize = 3;
pub const ORACLE_MAX_PERIOD: usize = 12;

struct CycleScorer {
    /// `prefix[i][g] = Σ_{j<g} Tr h^(j)(P̄_i)`.
    prefix: Vec<Vec<f64>>,
    /// Open-loop limit trace of stable sensors, charged when a cycle never serves them.
    idle: Vec<Option<f64>>,
    fp: FairnessParam,
    objective: OracleObjective,
}

impl CycleScorer {
    fn score(&self, cycle: &[usize], actions: &[ActionMask]) -> Option<f64> {
        let l = cycle.len();
        let mut total = 0.0;
        for (i, sums) in self.prefix.iter().enumerate() {
            let hits: Vec<usize> = (0..l).filter(|&k| actions[cycle[k]].is_active(i)).collect();
            let Some(&first) = hits.first() else {
                total += self.fp.apply(self.idle[i]?);
                continue;
            };
            let mut exact = 0.0;
            for (j, &s) in hits.iter().enumerate() {
                let next = hits.get(j + 1).copied().unwrap_or(first + l);
                let g = next - s;
                match self.objective {
                    OracleObjective::Exact => exact += sums[g],
                    OracleObjective::Segmented => {
                        total += g as f64 * self.fp.apply(sums[g] / g as f64) / l as f64
                    }
                }
            }
            if self.objective == OracleObjective::Exact {
                total += self.fp.apply(exact / l as f64);
            }
        }
        Some(total)
    }
}

fn idle_traces(caches: &[SteadyStateCache]) -> Result<Vec<Option<f64>>> {
    caches
        .iter()
        .map(|c| {
            if c.is_stable() {
                trace_at(c, usize::MAX).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

fn gap_prefix_sums(caches: &[SteadyStateCache], max_gap: usize) -> Result<Vec<Vec<f64>>> {
    caches
        .iter()
        .map(|c| {
            let t = c.traces(max_gap)?;
            let mut acc = vec![0.0; max_gap + 1];
            for g in 0..max_gap {
                acc[g + 1] = acc[g] + t[g];
            }
            Ok(acc)
        })
        .collect()
}

/// Long-run value of repeating `cycle` forever under `objective`.
pub fn cycle_objective(
    cycle: &[ActionMask],
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    objective: OracleObjective,
) -> Result<f64> {
    if cycle.is_empty() {
        return Err(HarnessError::EmptyCycle);
    }
    Schedule::Explicit(cycle.to_vec()).validate(caches.len(), None)?;
    if let Some(sensor) = (0..caches.len())
        .find(|&i| !caches[i].is_stable() && !cycle.iter().any(|a| a.is_active(i)))
    {
        return Err(HarnessError::NoTransmission { sensor });
    }
    let scorer = CycleScorer {
        prefix: gap_prefix_sums(caches, cycle.len())?,
        idle: idle_traces(caches)?,
        fp,
        objective,
    };
    let idx: Vec<usize> = (0..cycle.len()).collect();
    Ok(scorer
        .score(&idx, cycle)
        .expect("every unstable sensor transmits in the cycle"))
}

/// Minimum over every cycle of feasible masks with length `≤ max_period` in
/// which each unstable sensor transmits at least once. A stable sensor left
/// idle is charged `f_q` of its open-loop limit trace.
pub fn brute_force_periodic_oracle(
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    z: usize,
    max_period: usize,
    objective: OracleObjective,
) -> Result<OracleResult> {
    let n = caches.len();
    if n > ORACLE_MAX_SENSORS || max_period > ORACLE_MAX_PERIOD {
        return Err(HarnessError::TooLarge(format!(
            "N = {n} (max {ORACLE_MAX_SENSORS}), period {max_period} (max {ORACLE_MAX_PERIOD})"
        )));
    }
    if max_period == 0 {
        return Err(HarnessError::TooLarge("max_period must be positive".into()));
    }
    let actions = enumerate_actions(n, z)?;
    let scorer = CycleScorer {
        prefix: gap_prefix_sums(caches, max_period)?,
        idle: idle_traces(caches)?,
        fp,
        objective,
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for l in 1..=max_period {
        let mut cycle = vec![0usize; l];
        loop {
            if let Some(v) = scorer.score(&cycle, &actions) {
                // keep the shortest cycle among ties
                if best.as_ref().is_none_or(|(b, _)| v < *b - 1e-12 * b.abs()) {
                    best = Some((v, cycle.clone()));
                }
            }
            // odometer increment
            let mut pos = l;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                cycle[pos] += 1;
                if cycle[pos] < actions.len() {
                    break;
                }
                cycle[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX {
                break;
            }
        }
    }
    let (value, cycle) = best.ok_or_else(|| {
        HarnessError::TooLarge(format!("no cycle of length <= {max_period} serves the unstable sensors"))
    })?;
    Ok(OracleResult {
        value,
        cycle: cycle.into_iter().map(|a| actions[a].clone()).collect(),
    })
}

/// Exhaustive search over rates on the grid `{k·step}` inside `[r̲_i, 1]` with
/// `Σ r ≤ R`. Points where `f_q(J̃)` is not representable are skipped. For
/// stable plants `r̲ = 0` is a grid point, valued at the limit of `J̃`.
pub fn grid_search_rate_oracle(
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    r_total: f64,
    step: f64,
    epsilon: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(step > 0.0) {
        return Err(HarnessError::InvalidStep(step));
    }
    let n = caches.len();
    if n == 0 || n > ORACLE_MAX_SENSORS {
        return Err(HarnessError::TooLarge(format!("N = {n} (max {ORACLE_MAX_SENSORS})")));
    }
    let cells = (1.0 / step).round() as usize;
    let budget = ((r_total / step) + 1e-9).floor() as usize;
    // tables[i][k] = f_q(J̃_i(k·step)) or ∞
    let tables: Vec<Vec<f64>> = caches
        .iter()
        .map(|c| {
            let lo = lower_rate_bound(c.rho_a(), epsilon);
            (0..=cells)
                .map(|k| {
                    let r = (k as f64 * step).min(1.0);
                    let cost = if k == 0 {
                        match (lo == 0.0).then(|| rate_cost_limit(c)) {
                            Some(Ok(Some(j))) => Ok(j),
                            _ => return f64::INFINITY,
                        }
                    } else if r < lo - 1e-15 {
                        return f64::INFINITY;
                    } else {
                        rate_cost(r, c)
                    };
                    match cost {
                        Ok(j) => {
                            let v = fp.apply(j);
                            if v.is_finite() { v } else { f64::INFINITY }
                        }
                        Err(_) => f64::INFINITY,
                    }
                })
                .collect()
        })
        .collect();
    // best_last[b] = best (value, k) of the last sensor with k ≤ b
    let last = &tables[n - 1];
    let mut best_last = Vec::with_capacity(budget + 1);
    let mut run = (f64::INFINITY, 0usize);
    for b in 0..=budget {
        if b <= cells && last[b] < run.0 {
            run = (last[b], b);
        }
        best_last.push(run);
    }
    let mut best = (f64::INFINITY, vec![0usize; n]);
    let mut ks = vec![0usize; n - 1];
    loop {
        let used: usize = ks.iter().sum();
        if used <= budget {
            let head: f64 = ks.iter().enumerate().map(|(i, &k)| tables[i][k]).sum();
            if head.is_finite() {
                let (tail, k_last) = best_last[budget - used];
                if head + tail < best.0 {
                    let mut all = ks.clone();
                    all.push(k_last);
                    best = (head + tail, all);
                }
            }
        }
        let mut pos = ks.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            ks[pos] += 1;
            if ks[pos] <= cells {
                break;
            }
            ks[pos] = 0;
            if pos == 0 {
                pos = usize::MAX;
                break;
            }
        }
        if ks.is_empty() || pos == usize::MAX {
            break;
        }
    }
    if !best.0.is_finite() {
        return Err(HarnessError::TooLarge("no representable grid point".into()));
    }
    Ok((
        best.0,
        best.1.iter().map(|&k| (k as f64 * step).min(1.0)).collect(),
    ))
}

/// Draws `N(0, Σ)` samples through a symmetric square root of `Σ`.
struct Gaussian {
    root: DMatrix<f64>,
}

impl Gaussian {
    fn new(cov: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(cov.clone());
        let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
        Self {
            root: &eig.eigenvectors * scale,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.root.ncols(), |_, _| StandardNormal.sample(rng));
        &self.root * z
    }
}

pub const MONTE_CARLO_MIN_TRIALS: usize = 1_000;

/// Simulates the plant, the sensor's steady-state Kalman filter and the
/// hold-and-predict estimator under `policy`, and returns
/// `max_k |E‖e_k‖² − E Tr h^(τ_k)(P̄)| / E Tr h^(τ_k)(P̄)` over sampled trajectories.
pub fn monte_carlo_state_check(
    sys: &SystemModel,
    policy: ThresholdPolicy,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    if trials < MONTE_CARLO_MIN_TRIALS {
        return Err(HarnessError::TooFewTrials {
            min: MONTE_CARLO_MIN_TRIALS,
            actual: trials,
        });
    }
    let cache = sys.steady_state()?;
    let p_bar = cache.p_bar().clone();
    let prior = &sys.a * &p_bar * sys.a.transpose() + &sys.q;
    let innovation = &sys.c * &prior * sys.c.transpose() + &sys.r_meas;
    let inv = innovation
        .clone()
        .cholesky()
        .ok_or(EstimationError::SingularInnovation)?
        .inverse();
    let gain = &prior * sys.c.transpose() * inv;
    let init = Gaussian::new(&p_bar);
    let process = Gaussian::new(&sys.q);
    let sensor = Gaussian::new(&sys.r_meas);
    let predicted: Vec<f64> = (0..=horizon)
        .map(|j| cache.trace(j))
        .collect::<std::result::Result<_, _>>()?;

    let zero = || (vec![0.0; horizon], vec![0.0; horizon]);
    let (empirical, expected) = (0..trials as u64)
        .into_par_iter()
        .fold(zero, |(mut emp, mut exp), trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let schedule = realize_threshold_schedule(policy, horizon, seed ^ (trial << 20) ^ trial);
            // k = -1: filter at steady state, estimator synchronized.
            let mut filtered = DVector::zeros(sys.state_dim());
            let mut x = init.sample(&mut rng);
            let mut held = filtered.clone();
            let mut tau = 0usize;
            for (k, &send) in schedule.iter().enumerate() {
                x = &sys.a * &x + process.sample(&mut rng);
                let y = &sys.c * &x + sensor.sample(&mut rng);
                let pred = &sys.a * &filtered;
                filtered = &pred + &gain * (y - &sys.c * &pred);
                if send {
                    held = filtered.clone();
                    tau = 0;
                } else {
                    held = &sys.a * &held;
                    tau += 1;
                }
                emp[k] += (&x - &held).norm_squared();
                exp[k] += predicted[tau.min(horizon)];
            }
            (emp, exp)
        })
        .reduce(zero, |(mut a, mut b), (c, d)| {
            for (x, y) in a.iter_mut().zip(c) {
                *x += y;
            }
            for (x, y) in b.iter_mut().zip(d) {
                *x += y;
            }
            (a, b)
        });
    Ok(empirical
        .iter()
        .zip(&expected)
        .map(|(e, p)| {
            if *p > 0.0 {
                (e - p).abs() / p
            } else {
                e.abs() / trials as f64
            }
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{relative_value_iteration, MdpConfig};

    fn scalar(a: f64) -> SteadyStateCache {
        SystemModel::scalar("s", a, 1.0, 1.0, 1.0)
            .unwrap()
            .steady_state()
            .unwrap()
    }

    fn masks(rows: &[&str]) -> Vec<ActionMask> {
        rows.iter()
            .map(|r| ActionMask::from_bits(r.chars().map(|c| c == '1').collect()))
            .collect()
    }

    #[test]
    fn all_ones_gives_steady_traces() {
        let caches = vec![scalar(1.3), scalar(0.4)];
        let fp = FairnessParam::new(0.0).unwrap();
        let sched = Schedule::Periodic {
            prefix: vec![],
            cycle: masks(&["11"]),
        };
        let rep = evaluate_schedule(&sched, &caches, fp).unwrap();
        for (j, c) in rep.per_sensor_j.iter().zip(&caches) {
            assert!((j - c.trace(0).unwrap()).abs() < 1e-12);
        }
        assert!((rep.total_cost - rep.per_sensor_j.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn alternation_averages_two_traces() {
        let caches = vec![scalar(1.2), scalar(1.2)];
        let fp = FairnessParam::new(1.0).unwrap();
        let t = caches[0].traces(2).unwrap();
        let sched = Schedule::Periodic {
            prefix: masks(&["00", "11"]),
            cycle: masks(&["10", "01"]),
        };
        let rep = evaluate_schedule(&sched, &caches, fp).unwrap();
        for j in &rep.per_sensor_j {
            assert!((j - (t[0] + t[1]) / 2.0).abs() < 1e-12);
        }
        assert!((rep.entropy_bits - 1.0).abs() < 1e-12);
        assert_eq!(rep.period, Some((2, 2)));
    }

    #[test]
    fn explicit_approaches_cycle_average() {
        let caches = vec![scalar(1.2), scalar(0.8), scalar(1.05)];
        let fp = FairnessParam::new(0.5).unwrap();
        let cycle = masks(&["100", "010", "101", "001"]);
        let periodic = evaluate_schedule(
            &Schedule::Periodic {
                prefix: vec![],
                cycle: cycle.clone(),
            },
            &caches,
            fp,
        )
        .unwrap();
        let long: Vec<ActionMask> = cycle.iter().cycle().take(400).cloned().collect();
        let explicit = evaluate_schedule(&Schedule::Explicit(long), &caches, fp).unwrap();
        for (a, b) in periodic.per_sensor_j.iter().zip(&explicit.per_sensor_j) {
            assert!((a - b).abs() / a < 0.01);
        }
    }

    #[test]
    fn unscheduled_unstable_sensor_is_flagged() {
        let caches = vec![scalar(1.5), scalar(0.5)];
        let fp = FairnessParam::new(0.0).unwrap();
        let sched = Schedule::Periodic {
            prefix: vec![],
            cycle: masks(&["01"]),
        };
        let rep = evaluate_schedule(&sched, &caches, fp).unwrap();
        assert_eq!(rep.diverging, vec![0]);
        assert!(rep.total_cost.is_infinite());
        assert!(rep.entropy_bits.is_nan());
        let explicit = Schedule::Explicit(vec![masks(&["01"])[0].clone(); 3000]);
        let rep = evaluate_schedule(&explicit, &caches, fp).unwrap();
        assert_eq!(rep.diverging, vec![0]);
        // a stable sensor left alone settles at its open-loop limit
        let sched = Schedule::Periodic {
            prefix: vec![],
            cycle: masks(&["10"]),
        };
        let rep = evaluate_schedule(&sched, &caches, fp).unwrap();
        assert!(rep.is_finite());
        assert!((rep.per_sensor_j[1] - 1.0 / 0.75).abs() < 1e-9);
    }

    #[test]
    fn entropy_cases() {
        assert!((entropy_measure(&[3.0; 5]).unwrap() - 5f64.log2()).abs() < 1e-12);
        assert!((entropy_measure(&[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(entropy_measure(&[1.0, 0.0]).is_err());
        assert!(entropy_measure(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn segments_follow_boundary_rule() {
        let caches = vec![scalar(1.2), scalar(0.9)];
        let steps = masks(&["10", "01", "10", "00", "01", "10"]);
        let dec = segment_decomposition(&steps, &caches, 5).unwrap();
        assert_eq!(dec.sensors[0].starts, vec![0, 2, 5]);
        assert_eq!(dec.sensors[0].lengths, vec![2, 3, 0]);
        assert_eq!(dec.sensors[1].lengths, vec![3, 1]);
        for s in &dec.sensors {
            assert_eq!(s.lengths.iter().sum::<usize>(), 5 - s.starts[0]);
        }
        let fp0 = FairnessParam::new(0.0).unwrap();
        let obj = segment_objective(&steps, &caches, fp0, 5).unwrap();
        let t0 = caches[0].traces(3).unwrap();
        let t1 = caches[1].traces(3).unwrap();
        let direct = (t0[0] + t0[1] + t0[0] + t0[1] + t0[2] + t1[0] + t1[1] + t1[2] + t1[0]) / 6.0;
        assert!((obj - direct).abs() < 1e-12);
        let silent = masks(&["10", "10"]);
        assert_eq!(
            segment_objective(&silent, &caches, fp0, 1).unwrap_err(),
            HarnessError::NoTransmission { sensor: 1 }
        );
    }

    #[test]
    fn oracle_matches_value_iteration_on_pair() {
        let caches = vec![scalar(1.2), scalar(0.9)];
        for q in [0.0, 1.0] {
            let fp = FairnessParam::new(q).unwrap();
            let oracle = brute_force_periodic_oracle(&caches, fp, 1, 8, OracleObjective::Segmented).unwrap();
            let (table, _) = relative_value_iteration(
                &caches,
                fp,
                1,
                &MdpConfig {
                    tau_max: 10,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(
                (table.average_cost_estimate - oracle.value).abs() < 1e-6 * oracle.value,
                "q={q}: {} vs {}",
                table.average_cost_estimate,
                oracle.value
            );
        }
    }

    #[test]
    fn cycle_objective_matches_evaluation() {
        let caches = vec![scalar(1.2), scalar(0.9)];
        let fp = FairnessParam::new(2.0).unwrap();
        let cycle = masks(&["10", "01", "10", "10", "01"]);
        let rep = evaluate_schedule(
            &Schedule::Periodic {
                prefix: vec![],
                cycle: cycle.clone(),
            },
            &caches,
            fp,
        )
        .unwrap();
        let exact = cycle_objective(&cycle, &caches, fp, OracleObjective::Exact).unwrap();
        assert!((exact - rep.q_objective).abs() < 1e-9 * exact);
        let seg = cycle_objective(&cycle, &caches, fp, OracleObjective::Segmented).unwrap();
        assert!(seg >= exact);
        let idle = cycle_objective(&masks(&["10"]), &caches, fp, OracleObjective::Exact).unwrap();
        let limit = caches[1].trace(caches[1].cap() - 1).unwrap();
        let served = caches[0].trace(0).unwrap();
        assert!((idle - fp.apply(served) - fp.apply(limit)).abs() < 1e-9 * idle);
        let unstable = vec![scalar(1.2), scalar(1.1)];
        assert!(cycle_objective(&masks(&["10"]), &unstable, fp, OracleObjective::Exact).is_err());
    }

    #[test]
    fn oracle_single_sensor_transmits_always() {
        let caches = vec![scalar(1.1)];
        let fp = FairnessParam::new(2.0).unwrap();
        let res = brute_force_periodic_oracle(&caches, fp, 1, 4, OracleObjective::Exact).unwrap();
        assert!((res.value - fp.apply(caches[0].trace(0).unwrap())).abs() < 1e-12);
        assert!(brute_force_periodic_oracle(&vec![caches[0].clone(); 4], fp, 1, 4, OracleObjective::Exact).is_err());
    }

    #[test]
    fn grid_oracle_cases() {
        let one = vec![scalar(1.3)];
        let fp = FairnessParam::new(0.0).unwrap();
        let (v, r) = grid_search_rate_oracle(&one, fp, 1.0, 1e-3, 1e-3).unwrap();
        assert_eq!(r, vec![1.0]);
        assert!((v - one[0].trace(0).unwrap()).abs() < 1e-12);
        let pair = vec![scalar(1.3), scalar(1.3)];
        let fp1 = FairnessParam::new(1.0).unwrap();
        let (_, r) = grid_search_rate_oracle(&pair, fp1, 1.0, 1e-3, 1e-3).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-9 && (r[1] - 0.5).abs() < 1e-9);
        assert!(grid_search_rate_oracle(&pair, fp1, 1.0, 0.0, 1e-3).is_err());
    }

    #[test]
    fn csv_row_layout() {
        let mut rep = CostReport::from_costs(vec![1.0, 3.0], FairnessParam::new(0.0).unwrap());
        rep.attach_gap(3.5);
        rep.period = Some((1, 4));
        assert_eq!(report_csv_header(2), "method,q,J_1,J_2,total,entropy_bits,q_objective,g_star,ratio,period_M,period_L");
        let row = rep.csv_row("mdp", 0.5);
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 11);
        assert_eq!(&fields[..4], ["mdp", "0.5", "1", "3"]);
        assert_eq!(&fields[9..], ["1", "4"]);
    }

    #[test]
    fn monte_carlo_requires_trials() {
        let sys = SystemModel::scalar("s", 0.9, 1.0, 1.0, 1.0).unwrap();
        let policy = ThresholdPolicy { eta: 0, p: 1.0 };
        assert!(monte_carlo_state_check(&sys, policy, 10, 5, 0).is_err());
    }
}
