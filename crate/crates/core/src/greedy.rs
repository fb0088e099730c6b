//! Greedy activation: each step, the `Z` sensors with the largest stage cost
//! transmit.

use thiserror::Error;

use crate::estimation::{EstimationError, FairnessParam, SteadyStateCache};
use crate::mdp::{detect_period, one_stage_cost, trajectory_csv, ActionMask, MdpError};

#[derive(Debug, Error, PartialEq)]
pub enum GreedyError {
    #[error("activation budget must satisfy 1 <= Z <= N, got Z = {z} with N = {n}")]
    InvalidBudget { z: usize, n: usize },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("initial state has {actual} entries, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

impl From<MdpError> for GreedyError {
    fn from(e: MdpError) -> Self {
        match e {
            MdpError::Estimation(inner) => GreedyError::Estimation(inner),
            MdpError::InvalidBudget { z, n } => GreedyError::InvalidBudget { z, n },
            other => unreachable!("stage cost evaluation cannot fail with {other}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, GreedyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

/// Holding time at which a sensor's stage cost is read when ranking it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidateTime {
    /// `c_i(τ_{k−1})`: the cost of the state the decision is made in, as in
    /// the MDP stage cost.
    #[default]
    Current,
    /// `c_i(τ_{k−1} + 1)`: the cost the sensor would carry if left idle.
    Next,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyConfig {
    pub horizon: usize,
    /// Holding times before the first decision; all zeros (steady state) when `None`.
    pub initial_tau: Option<Vec<usize>>,
    pub tie_break: TieBreak,
    pub candidate: CandidateTime,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            horizon: 10_000,
            initial_tau: None,
            tie_break: TieBreak::LowestIndex,
            candidate: CandidateTime::Current,
        }
    }
}

/// Picks `min(Z, N)` sensors by descending stage cost.
pub fn greedy_step(
    tau_prev: &[usize],
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    z: usize,
    candidate: CandidateTime,
) -> Result<ActionMask> {
    let n = caches.len();
    if tau_prev.len() != n {
        return Err(GreedyError::DimensionMismatch {
            expected: n,
            actual: tau_prev.len(),
        });
    }
    if z < 1 || z > n {
        return Err(GreedyError::InvalidBudget { z, n });
    }
    let shift = match candidate {
        CandidateTime::Current => 0,
        CandidateTime::Next => 1,
    };
    let costs = tau_prev
        .iter()
        .zip(caches)
        .map(|(&t, c)| one_stage_cost(t + shift, c, fp))
        .collect::<std::result::Result<Vec<f64>, MdpError>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps lower indices first among equal costs
    order.sort_by(|&a, &b| costs[b].total_cmp(&costs[a]));
    let mut zeta = vec![false; n];
    for &i in order.iter().take(z) {
        zeta[i] = true;
    }
    Ok(ActionMask::from_bits(zeta))
}

#[derive(Debug, Clone)]
pub struct GreedyRun {
    pub actions: Vec<ActionMask>,
    /// Holding times after each decision.
    pub states: Vec<Vec<usize>>,
    /// Stage cost `Σ_i c_i(τ_i)` of the state each decision was made in.
    pub costs: Vec<f64>,
    /// `(burn-in M, period L)` of `actions`, if one was found.
    pub period: Option<(usize, usize)>,
}

impl GreedyRun {
    pub fn to_csv(&self) -> String {
        trajectory_csv(&self.actions, &self.costs)
    }
}

/// Iterates [`greedy_step`] over the horizon with unsaturated holding times.
pub fn greedy_schedule(
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    z: usize,
    cfg: &GreedyConfig,
) -> Result<GreedyRun> {
    let n = caches.len();
    if cfg.horizon == 0 {
        return Err(GreedyError::EmptyHorizon);
    }
    if z < 1 || z > n {
        return Err(GreedyError::InvalidBudget { z, n });
    }
    let mut tau = match &cfg.initial_tau {
        Some(t) if t.len() != n => {
            return Err(GreedyError::DimensionMismatch {
                expected: n,
                actual: t.len(),
            })
        }
        Some(t) => t.clone(),
        None => vec![0; n],
    };
    let mut run = GreedyRun {
        actions: Vec::with_capacity(cfg.horizon),
        states: Vec::with_capacity(cfg.horizon),
        costs: Vec::with_capacity(cfg.horizon),
        period: None,
    };
    for _ in 0..cfg.horizon {
        let mut cost = 0.0;
        for (&t, c) in tau.iter().zip(caches) {
            cost += one_stage_cost(t, c, fp)?;
        }
        let a = greedy_step(&tau, caches, fp, z, cfg.candidate)?;
        for (i, t) in tau.iter_mut().enumerate() {
            *t = if a.is_active(i) { 0 } else { *t + 1 };
        }
        run.actions.push(a);
        run.states.push(tau.clone());
        run.costs.push(cost);
    }
    run.period = detect_period(&run.actions);
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::SystemModel;

    fn scalar(a: f64) -> SteadyStateCache {
        SystemModel::scalar("s", a, 1.0, 1.0, 1.0)
            .unwrap()
            .steady_state()
            .unwrap()
    }

    #[test]
    fn step_cases() {
        let caches = vec![scalar(1.2), scalar(1.2)];
        let fp = FairnessParam::new(0.0).unwrap();
        for cand in [CandidateTime::Current, CandidateTime::Next] {
            let a = greedy_step(&[0, 0], &caches, fp, 1, cand).unwrap();
            assert_eq!(a.bits(), "10");
            let a = greedy_step(&[0, 1], &caches, fp, 1, cand).unwrap();
            assert_eq!(a.bits(), "01");
        }
        assert!(greedy_step(&[0], &caches, fp, 1, CandidateTime::Current).is_err());
        assert!(greedy_step(&[0, 0], &caches, fp, 3, CandidateTime::Current).is_err());
    }

    #[test]
    fn identical_pair_alternates() {
        let caches = vec![scalar(1.2), scalar(1.2)];
        let fp = FairnessParam::new(0.0).unwrap();
        let run = greedy_schedule(&caches, fp, 1, &GreedyConfig { horizon: 30, ..Default::default() }).unwrap();
        let bits: Vec<String> = run.actions.iter().take(4).map(|a| a.bits()).collect();
        assert_eq!(bits, ["10", "01", "10", "01"]);
        assert_eq!(run.period, Some((0, 2)));
    }

    #[test]
    fn single_sensor_always_transmits() {
        let caches = vec![scalar(0.7)];
        let fp = FairnessParam::new(2.0).unwrap();
        let run = greedy_schedule(&caches, fp, 1, &GreedyConfig { horizon: 10, ..Default::default() }).unwrap();
        assert!(run.actions.iter().all(|a| a.is_active(0)));
        assert_eq!(run.period, Some((0, 1)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let caches = vec![scalar(0.7)];
        let fp = FairnessParam::new(0.0).unwrap();
        let zero = GreedyConfig { horizon: 0, ..Default::default() };
        assert_eq!(greedy_schedule(&caches, fp, 1, &zero).unwrap_err(), GreedyError::EmptyHorizon);
        let bad = GreedyConfig {
            initial_tau: Some(vec![0, 0]),
            ..Default::default()
        };
        assert!(greedy_schedule(&caches, fp, 1, &bad).is_err());
    }
}
