//! Average-cost MDP over holding times for the activation-constrained case.
//!
//! The state is the vector of steps since each sensor last transmitted,
//! truncated at `tau_max` with saturating transitions. Stage costs are
//! tabulated once per sensor so a value-iteration sweep is pure indexing.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::estimation::{EstimationError, FairnessParam, SteadyStateCache};

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("activation budget must satisfy 1 <= Z <= N, got Z = {z} with N = {n}")]
    InvalidBudget { z: usize, n: usize },
    #[error("invalid MDP configuration: {0}")]
    InvalidConfig(String),
    #[error("truncated state space has {states} states, above the limit of {limit}")]
    TooLarge { states: u128, limit: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("holding time {tau} exceeds tau_max = {tau_max}")]
    StateOutOfRange { tau: usize, tau_max: usize },
    #[error("action activates {active} sensors but the budget is {budget}")]
    ActionOverBudget { active: usize, budget: usize },
    #[error("no sensors given")]
    Empty,
    #[error("value iteration produced a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

pub type Result<T> = std::result::Result<T, MdpError>;

/// Upper limit on `(tau_max + 1)^N`.
pub const MAX_STATES: usize = 50_000_000;

/// Steps since each sensor's last transmission, each in `0..=tau_max`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HoldingState {
    tau: Vec<usize>,
}

impl HoldingState {
    pub fn new(tau: Vec<usize>, tau_max: usize) -> Result<Self> {
        if let Some(&t) = tau.iter().find(|&&t| t > tau_max) {
            return Err(MdpError::StateOutOfRange { tau: t, tau_max });
        }
        Ok(Self { tau })
    }

    pub fn zeros(n: usize) -> Self {
        Self { tau: vec![0; n] }
    }

    pub fn tau(&self) -> &[usize] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

/// Set of sensors that transmit in one step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionMask {
    zeta: Vec<bool>,
}

impl ActionMask {
    pub fn new(zeta: Vec<bool>, budget: usize) -> Result<Self> {
        let active = zeta.iter().filter(|&&b| b).count();
        if active > budget {
            return Err(MdpError::ActionOverBudget { active, budget });
        }
        Ok(Self { zeta })
    }

    pub fn zeta(&self) -> &[bool] {
        &self.zeta
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.zeta[i]
    }

    pub fn active_count(&self) -> usize {
        self.zeta.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.zeta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta.is_empty()
    }

    /// Mask without a budget check (the budget is the mask length).
    pub fn from_bits(zeta: Vec<bool>) -> Self {
        Self { zeta }
    }

    /// `"10010"`-style rendering.
    pub fn bits(&self) -> String {
        self.zeta.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpConfig {
    pub tau_max: usize,
    /// Sweeps stop once `span(V_t − V_{t−1}) ≤ tol_span · max(1, |ĝ|)`.
    pub tol_span: f64,
    pub max_sweeps: usize,
    /// Weight `θ ∈ (0, 1]` in `V ← (1−θ)V + θ·TV`. The deterministic chain is
    /// periodic, and undamped sweeps can cycle forever.
    pub damping: f64,
    pub initial_state: Option<Vec<usize>>,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            tau_max: 12,
            tol_span: 1e-8,
            max_sweeps: 100_000,
            damping: 0.5,
            initial_state: None,
        }
    }
}

impl MdpConfig {
    pub fn validate(&self, n: usize, z: usize) -> Result<()> {
        if n == 0 {
            return Err(MdpError::Empty);
        }
        if z < 1 || z > n {
            return Err(MdpError::InvalidBudget { z, n });
        }
        if self.tau_max * z < n {
            return Err(MdpError::InvalidConfig(format!(
                "tau_max = {} cannot represent a round-robin over {n} sensors with Z = {z}",
                self.tau_max
            )));
        }
        if !(self.tol_span > 0.0) {
            return Err(MdpError::InvalidConfig("tol_span must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(MdpError::InvalidConfig("max_sweeps must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(MdpError::InvalidConfig("damping must lie in (0, 1]".into()));
        }
        if let Some(init) = &self.initial_state {
            if init.len() != n {
                return Err(MdpError::DimensionMismatch {
                    expected: n,
                    actual: init.len(),
                });
            }
            HoldingState::new(init.clone(), self.tau_max)?;
        }
        Ok(())
    }

    pub fn start_state(&self, n: usize) -> HoldingState {
        match &self.initial_state {
            Some(tau) => HoldingState { tau: tau.clone() },
            None => HoldingState::zeros(n),
        }
    }
}

/// `c_i(τ) = (τ+1)·f_q(m_τ) − τ·f_q(m_{τ−1})` with `m_τ` the mean of the
/// first `τ+1` open-loop traces.
pub fn one_stage_cost(tau: usize, cache: &SteadyStateCache, fp: FairnessParam) -> Result<f64> {
    let (last, head) = cache.trace_and_prefix(tau)?;
    let total = head + last;
    let now = (tau + 1) as f64 * fp.apply(total / (tau + 1) as f64);
    let before = if tau == 0 {
        0.0
    } else {
        tau as f64 * fp.apply(head / tau as f64)
    };
    let c = now - before;
    if !c.is_finite() {
        return Err(EstimationError::NonFiniteTrace { index: tau }.into());
    }
    Ok(c)
}

/// Per-sensor stage costs for `τ = 0..=tau_max`.
pub fn stage_cost_table(
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    tau_max: usize,
) -> Result<Vec<Vec<f64>>> {
    caches
        .iter()
        .map(|c| (0..=tau_max).map(|t| one_stage_cost(t, c, fp)).collect())
        .collect()
}

/// All masks with at most `z` ones, by cardinality and then lexicographically
/// by the sorted index set.
pub fn enumerate_actions(n: usize, z: usize) -> Result<Vec<ActionMask>> {
    if z < 1 || z > n {
        return Err(MdpError::InvalidBudget { z, n });
    }
    let mut out = Vec::new();
    for k in 0..=z {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let mut zeta = vec![false; n];
            for &i in &idx {
                zeta[i] = true;
            }
            out.push(ActionMask { zeta });
            // next k-combination
            let mut pos = k;
            while pos > 0 && idx[pos - 1] == n - k + pos - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            idx[pos - 1] += 1;
            for j in pos..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

pub fn transition(phi: &HoldingState, a: &ActionMask, tau_max: usize) -> Result<HoldingState> {
    if phi.len() != a.len() {
        return Err(MdpError::DimensionMismatch {
            expected: phi.len(),
            actual: a.len(),
        });
    }
    let tau = phi
        .tau
        .iter()
        .zip(&a.zeta)
        .map(|(&t, &z)| if z { 0 } else { (t + 1).min(tau_max) })
        .collect();
    Ok(HoldingState { tau })
}

/// Mixed-radix indexing of the truncated state space; sensor 0 is the most
/// significant digit, so index order is lexicographic order on states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub n: usize,
    pub tau_max: usize,
    strides: Vec<usize>,
    size: usize,
}

impl StateSpace {
    pub fn new(n: usize, tau_max: usize) -> Result<Self> {
        let base = (tau_max + 1) as u128;
        let states = base.checked_pow(n as u32).unwrap_or(u128::MAX);
        if states > MAX_STATES as u128 {
            return Err(MdpError::TooLarge {
                states,
                limit: MAX_STATES,
            });
        }
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (tau_max + 1);
        }
        Ok(Self {
            n,
            tau_max,
            strides,
            size: states as usize,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn index(&self, phi: &HoldingState) -> usize {
        phi.tau.iter().zip(&self.strides).map(|(t, s)| t * s).sum()
    }

    pub fn state(&self, mut idx: usize) -> HoldingState {
        let mut tau = vec![0; self.n];
        for (t, s) in tau.iter_mut().zip(&self.strides) {
            *t = idx / s;
            idx %= s;
        }
        HoldingState { tau }
    }

    fn digits(&self, mut idx: usize, out: &mut [usize]) {
        for (t, s) in out.iter_mut().zip(&self.strides) {
            *t = idx / s;
            idx %= s;
        }
    }
}

/// Result of relative value iteration. `values[reference] = 0` always.
#[derive(Debug, Clone)]
pub struct ValueTable {
    pub space: StateSpace,
    pub values: Vec<f64>,
    pub reference_state: HoldingState,
    pub average_cost_estimate: f64,
    pub sweeps: usize,
    pub last_span: f64,
    pub converged: bool,
    /// One record per sweep.
    pub history: Vec<SweepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    pub span: f64,
    pub average_cost: f64,
}

impl ValueTable {
    pub fn value(&self, phi: &HoldingState) -> f64 {
        self.values[self.space.index(phi)]
    }
}

/// Deterministic stationary policy over the truncated state space.
#[derive(Debug, Clone)]
pub struct StagePolicy {
    pub space: StateSpace,
    pub actions: Vec<ActionMask>,
    /// Index into `actions` for every state index.
    pub decision: Vec<u16>,
}

impl StagePolicy {
    pub fn action(&self, phi: &HoldingState) -> &ActionMask {
        &self.actions[self.decision[self.space.index(phi)] as usize]
    }
}

/// Everything a sweep needs: per-state cost and per-state successor indices.
struct Sweeper<'a> {
    space: &'a StateSpace,
    /// Active sensor indices of each action, in enumeration order.
    active: Vec<Vec<usize>>,
    costs: &'a [Vec<f64>],
}

impl<'a> Sweeper<'a> {
    fn new(space: &'a StateSpace, actions: &[ActionMask], costs: &'a [Vec<f64>]) -> Self {
        let active = actions
            .iter()
            .map(|a| (0..a.len()).filter(|&i| a.zeta[i]).collect())
            .collect();
        Self {
            space,
            active,
            costs,
        }
    }

    /// `(c(φ), argmin_a V(φ'), min_a V(φ'))` with the first minimizer kept.
    /// `scratch` must hold `2N` entries.
    fn evaluate(&self, idx: usize, values: &[f64], scratch: &mut [usize]) -> (f64, usize, f64) {
        let n = self.space.n;
        let (digits, offsets) = scratch.split_at_mut(n);
        self.space.digits(idx, digits);
        let tau_max = self.space.tau_max;
        let mut cost = 0.0;
        let mut idle = 0usize;
        for i in 0..n {
            let t = digits[i];
            cost += self.costs[i][t];
            // index offset that a reset of sensor i removes from the idle successor
            offsets[i] = (t + 1).min(tau_max) * self.space.strides[i];
            idle += offsets[i];
        }
        let mut best = f64::INFINITY;
        let mut best_a = 0;
        for (ai, on) in self.active.iter().enumerate() {
            let next = on.iter().fold(idle, |acc, &i| acc - offsets[i]);
            let v = values[next];
            if v < best {
                best = v;
                best_a = ai;
            }
        }
        (cost, best_a, best)
    }
}

/// Damped relative value iteration anchored at the all-zeros state.
///
/// Each sweep forms `U = (1−θ)V + θ(c + min_a V(φ'))`, reads the gain as
/// `U(0)/θ` and sets `V ← U − U(0)`. At a fixed point `V = c + min_a V(φ') − ĝ`.
pub fn relative_value_iteration(
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    z: usize,
    cfg: &MdpConfig,
) -> Result<(ValueTable, StagePolicy)> {
    cfg.validate(caches.len(), z)?;
    let costs = stage_cost_table(caches, fp, cfg.tau_max)?;
    value_iteration_on_table(&costs, z, cfg)
}

/// [`relative_value_iteration`] on precomputed stage costs; `costs[i][τ]`
/// for `τ = 0..=tau_max`.
pub fn value_iteration_on_table(
    costs: &[Vec<f64>],
    z: usize,
    cfg: &MdpConfig,
) -> Result<(ValueTable, StagePolicy)> {
    let n = costs.len();
    cfg.validate(n, z)?;
    if let Some(row) = costs.iter().find(|row| row.len() != cfg.tau_max + 1) {
        return Err(MdpError::DimensionMismatch {
            expected: cfg.tau_max + 1,
            actual: row.len(),
        });
    }
    let space = StateSpace::new(n, cfg.tau_max)?;
    let actions = enumerate_actions(n, z)?;
    let sweeper = Sweeper::new(&space, &actions, costs);
    let theta = cfg.damping;
    let mut values = vec![0.0; space.size()];
    let mut next = vec![0.0; space.size()];
    let mut gain = 0.0;
    let mut span = f64::INFINITY;
    let mut sweeps = 0;
    let mut converged = false;
    let mut history = Vec::new();

    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        next.par_chunks_mut(4096)
            .enumerate()
            .for_each(|(chunk, out)| {
                let mut scratch = vec![0; 2 * n];
                for (k, slot) in out.iter_mut().enumerate() {
                    let idx = chunk * 4096 + k;
                    let (c, _, m) = sweeper.evaluate(idx, &values, &mut scratch);
                    *slot = (1.0 - theta) * values[idx] + theta * (c + m);
                }
            });
        let anchor = next[0];
        gain = anchor / theta;
        let (lo, hi) = next
            .par_iter_mut()
            .zip(values.par_iter())
            .map(|(u, &v)| {
                *u -= anchor;
                let d = *u - v;
                (d, d)
            })
            .reduce(
                || (f64::INFINITY, f64::NEG_INFINITY),
                |a, b| (a.0.min(b.0), a.1.max(b.1)),
            );
        std::mem::swap(&mut values, &mut next);
        span = hi - lo;
        if !span.is_finite() || !gain.is_finite() {
            return Err(MdpError::NonFinite);
        }
        history.push(SweepRecord {
            sweep: sweeps,
            span,
            average_cost: gain,
        });
        if span <= cfg.tol_span * gain.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let decision = (0..space.size())
        .into_par_iter()
        .map_init(
            || vec![0; 2 * n],
            |scratch, idx| sweeper.evaluate(idx, &values, scratch).1 as u16,
        )
        .collect();
    let table = ValueTable {
        space: space.clone(),
        values,
        reference_state: HoldingState::zeros(n),
        average_cost_estimate: gain,
        sweeps,
        last_span: span,
        converged,
        history,
    };
    let policy = StagePolicy {
        space,
        actions,
        decision,
    };
    Ok((table, policy))
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub actions: Vec<ActionMask>,
    /// `states[k]` is the state before `actions[k]` is applied.
    pub states: Vec<HoldingState>,
    pub costs: Vec<f64>,
    /// Cesàro averages of `costs`.
    pub running_average: Vec<f64>,
}

impl Rollout {
    /// Mean stage cost over `costs[from..]`.
    pub fn tail_average(&self, from: usize) -> f64 {
        let tail = &self.costs[from.min(self.costs.len())..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Per-sensor transmission flags, one `Vec<bool>` per step.
    pub fn transmissions(&self) -> Vec<Vec<bool>> {
        self.actions.iter().map(|a| a.zeta.clone()).collect()
    }

    /// CSV with header `k,zeta_1..zeta_N,cost`.
    pub fn to_csv(&self) -> String {
        trajectory_csv(&self.actions, &self.costs)
    }
}

/// Trajectory CSV: one row per step with the mask and the stage cost of the
/// state the mask was chosen in.
pub fn trajectory_csv(actions: &[ActionMask], costs: &[f64]) -> String {
    let n = actions.first().map_or(0, |a| a.len());
    let mut out = String::from("k");
    for i in 1..=n {
        let _ = write!(out, ",zeta_{i}");
    }
    out.push_str(",cost\n");
    for (k, (a, c)) in actions.iter().zip(costs).enumerate() {
        let _ = write!(out, "{k}");
        for &z in &a.zeta {
            let _ = write!(out, ",{}", u8::from(z));
        }
        let _ = writeln!(out, ",{c}");
    }
    out
}

/// Follows `policy` from `phi0` for `horizon` steps.
pub fn rollout_policy(
    policy: &StagePolicy,
    costs: &[Vec<f64>],
    phi0: &HoldingState,
    horizon: usize,
) -> Result<Rollout> {
    let space = &policy.space;
    if phi0.len() != space.n || costs.len() != space.n {
        return Err(MdpError::DimensionMismatch {
            expected: space.n,
            actual: phi0.len().min(costs.len()),
        });
    }
    if let Some(&t) = phi0.tau.iter().find(|&&t| t > space.tau_max) {
        return Err(MdpError::StateOutOfRange {
            tau: t,
            tau_max: space.tau_max,
        });
    }
    let mut phi = phi0.clone();
    let mut out = Rollout {
        actions: Vec::with_capacity(horizon),
        states: Vec::with_capacity(horizon),
        costs: Vec::with_capacity(horizon),
        running_average: Vec::with_capacity(horizon),
    };
    let mut total = 0.0;
    for k in 0..horizon {
        let c: f64 = phi.tau.iter().zip(costs).map(|(&t, row)| row[t]).sum();
        total += c;
        let a = policy.action(&phi).clone();
        let next = transition(&phi, &a, space.tau_max)?;
        out.states.push(phi);
        out.actions.push(a);
        out.costs.push(c);
        out.running_average.push(total / (k + 1) as f64);
        phi = next;
    }
    Ok(out)
}

/// Smallest period `L` (and its burn-in `M`) with `seq[k] == seq[k+L]` for
/// every recorded `k ≥ M`.
///
/// The periodic tail must cover at least half the sequence and two full
/// periods; otherwise a short coincidental repeat at the end would count.
pub fn detect_period<T: PartialEq>(seq: &[T]) -> Option<(usize, usize)> {
    let n = seq.len();
    if n == 0 {
        return None;
    }
    if n == 1 {
        return Some((0, 1));
    }
    let need = n.div_ceil(2);
    for l in 1..=n / 2 {
        let floor = n.saturating_sub(need.max(2 * l));
        // Scan backwards for the last mismatch.
        let mut m = 0;
        let mut k = n - l;
        while k > 0 {
            k -= 1;
            if seq[k] != seq[k + l] {
                m = k + 1;
                break;
            }
        }
        if m <= floor {
            return Some((m, l));
        }
    }
    None
}

/// One line per state: `tau_1 ... tau_N value action_bits`.
pub fn dump_value_table(table: &ValueTable, policy: &StagePolicy) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# average_cost {} sweeps {} span {} converged {}",
        table.average_cost_estimate, table.sweeps, table.last_span, table.converged
    );
    for idx in 0..table.space.size() {
        let phi = table.space.state(idx);
        for t in &phi.tau {
            let _ = write!(out, "{t} ");
        }
        let _ = writeln!(
            out,
            "{} {}",
            table.values[idx],
            policy.actions[policy.decision[idx] as usize].bits()
        );
    }
    out
}
