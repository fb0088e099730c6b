//! Invariant checks over randomly drawn plants (state dimension ≤ 3, at most
//! five sensors), each run for a fixed number of cases from a fixed seed.

use std::time::{Duration, Instant};

use fairsched::estimation::{min_eigenvalue, DEFAULT_FIXED_POINT_TOL};
use fairsched::greedy::{greedy_schedule, GreedyConfig};
use fairsched::harness::{
    brute_force_periodic_oracle, cycle_objective, entropy_measure, evaluate_schedule,
    OracleObjective, Schedule,
};
use fairsched::mdp::{
    detect_period, enumerate_actions, one_stage_cost, relative_value_iteration, rollout_policy,
    stage_cost_table, transition, ActionMask, HoldingState, MdpConfig,
};
use fairsched::rate::{
    primal_dual_step, rate_cost, realize_threshold_schedule, solve_rate_allocation, subgradient,
    threshold_from_rate, DualVector, RateProblem, RateVector, SolverConfig,
};
use fairsched::{
    fair_cost, lyapunov_step, measurement_update, spectral_radius, steady_state, EstimationError,
    FairnessParam, SteadyStateCache, SystemModel,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const DEFAULT_CASES: u32 = 100;

type Check = fn(u32) -> Result<(), String>;

/// Every suite by name.
pub const SUITES: &[(&str, Check)] = &[
    ("fixed_point_residual", fixed_point_residual),
    ("monotone_traces", monotone_traces),
    ("measurement_update_contracts", measurement_update_contracts),
    ("fair_cost_convexity", fair_cost_convexity),
    ("determinism", determinism),
    ("rate_identity", rate_identity),
    ("rate_cost_nonincreasing", rate_cost_nonincreasing),
    ("rate_cost_continuity", rate_cost_continuity),
    ("subgradient_sign", subgradient_sign),
    ("solver_iterates_stay_feasible", solver_iterates_stay_feasible),
    ("empirical_threshold_cost", empirical_threshold_cost),
    ("telescoping_identity", telescoping_identity),
    ("monotone_stage_cost", monotone_stage_cost),
    ("transition_totality", transition_totality),
    ("relaxation_inequality", relaxation_inequality),
    ("entropy_bounds", entropy_bounds),
    ("cycle_average_exactness", cycle_average_exactness),
    ("greedy_cardinality", greedy_cardinality),
    ("rollout_matches_gain", rollout_matches_gain),
    ("oracle_bound_chain", oracle_bound_chain),
];

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub result: Result<(), String>,
    pub elapsed: Duration,
}

pub fn run_suite(name: &str, cases: u32) -> Result<(), String> {
    let (_, check) = SUITES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| format!("no suite named {name}"))?;
    check(cases)
}

pub fn run_all(cases: u32) -> Vec<SuiteOutcome> {
    SUITES
        .iter()
        .map(|&(name, check)| {
            let start = Instant::now();
            let result = check(cases);
            SuiteOutcome {
                name,
                result,
                elapsed: start.elapsed(),
            }
        })
        .collect()
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            max_global_rejects: 10 * cases,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn fail(e: impl ToString) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn spd(n: usize, floor: f64) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n, -1.0, 1.0).prop_map(move |b| &b * b.transpose() + DMatrix::identity(n, n) * floor)
}

/// Plant with state dimension 1..=3, output dimension 1..=n and spectral
/// radius drawn from [0.2, 1.3].
pub fn system() -> impl Strategy<Value = SystemModel> {
    (1usize..=3)
        .prop_flat_map(|n| (Just(n), 1usize..=n))
        .prop_flat_map(|(n, m)| {
            (
                matrix(n, n, -1.0, 1.0),
                0.2f64..1.3,
                matrix(m, n, -1.0, 1.0),
                spd(n, 0.1),
                spd(m, 0.5),
            )
        })
        .prop_map(|(a, rho, c, q, r)| {
            let current = spectral_radius(&a);
            let a = if current > 1e-9 { a * (rho / current) } else { a };
            SystemModel::new("random", a, c, q, r).expect("generated system is well formed")
        })
}

/// Scalar plant `x⁺ = a x + w`, `y = x + v`.
pub fn scalar_system(a_range: std::ops::Range<f64>) -> impl Strategy<Value = SystemModel> {
    (a_range, 0.5f64..2.0, 0.5f64..2.0)
        .prop_map(|(a, q, r)| SystemModel::scalar("scalar", a, 1.0, q, r).expect("valid scalar plant"))
}

pub fn fairness() -> impl Strategy<Value = FairnessParam> {
    prop_oneof![Just(0.0), 0.0f64..5.0, Just(20.0)]
        .prop_map(|q| FairnessParam::new(q).expect("q is nonnegative"))
}

fn cache(sys: &SystemModel) -> Result<SteadyStateCache, TestCaseError> {
    match sys.steady_state() {
        Ok(c) => Ok(c),
        Err(EstimationError::NoConvergence { .. }) => Err(TestCaseError::reject("no steady state")),
        Err(e) => Err(fail(e)),
    }
}

fn caches(systems: &[SystemModel]) -> Result<Vec<SteadyStateCache>, TestCaseError> {
    systems.iter().map(cache).collect()
}

/// Round-robin over all `n` sensors in groups of `z`, followed by `extra`
/// random masks with at most `z` ones.
fn serving_cycle(n: usize, z: usize, extra: usize) -> impl Strategy<Value = Vec<ActionMask>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), n), extra).prop_map(move |rows| {
        let mut cycle: Vec<ActionMask> = (0..n.div_ceil(z))
            .map(|k| ActionMask::from_bits((0..n).map(|i| i / z == k).collect()))
            .collect();
        for mut r in rows {
            let mut on = 0;
            for b in r.iter_mut() {
                on += usize::from(*b);
                *b &= on <= z;
            }
            cycle.push(ActionMask::from_bits(r));
        }
        cycle
    })
}

fn fixed_point_residual(cases: u32) -> Result<(), String> {
    run(cases, system(), |sys| {
        let c = cache(&sys)?;
        prop_assert!(c.residual() <= DEFAULT_FIXED_POINT_TOL, "stored residual {}", c.residual());
        let p = c.p_bar();
        let again = measurement_update(&lyapunov_step(p, &sys).map_err(fail)?, &sys).map_err(fail)?;
        let scale = p.norm().max(1.0);
        prop_assert!((again - p).norm() <= 1e-10 * scale);
        prop_assert!(min_eigenvalue(p) >= -1e-10 * scale);
        Ok(())
    })
}

fn monotone_traces(cases: u32) -> Result<(), String> {
    run(cases, system(), |sys| {
        let c = cache(&sys)?;
        let t = c.traces(60).map_err(fail)?;
        prop_assert!(t[0] > 0.0);
        prop_assert!((t[0] - c.p_bar().trace()).abs() <= 1e-12 * t[0]);
        for j in 0..t.len() - 1 {
            prop_assert!(t[j + 1] >= t[j] * (1.0 - 1e-12), "trace drops at {j}: {} -> {}", t[j], t[j + 1]);
        }
        Ok(())
    })
}

fn measurement_update_contracts(cases: u32) -> Result<(), String> {
    let strategy = system().prop_flat_map(|sys| {
        let n = sys.state_dim();
        (Just(sys), spd(n, 0.0))
    });
    run(cases, strategy, |(sys, x)| {
        let post = measurement_update(&x, &sys).map_err(fail)?;
        let scale = x.norm().max(1.0);
        prop_assert!(post.trace() <= x.trace() + 1e-12 * scale);
        prop_assert!(min_eigenvalue(&(&x - &post)) >= -1e-9 * scale);
        Ok(())
    })
}

fn fair_cost_convexity(cases: u32) -> Result<(), String> {
    let strategy = (fairness(), 0.0f64..50.0, 0.0f64..50.0, 0.0f64..1.0);
    run(cases, strategy, |(fp, a, span, lambda)| {
        let b = a + span;
        let mix = fair_cost(lambda * a + (1.0 - lambda) * b, fp).map_err(fail)?;
        let chord = lambda * fair_cost(a, fp).map_err(fail)? + (1.0 - lambda) * fair_cost(b, fp).map_err(fail)?;
        prop_assert!(mix <= chord + 1e-12 * chord.abs().max(1.0));
        Ok(())
    })
}

fn determinism(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(system(), 1..=3), fairness());
    run(cases, strategy, |(systems, fp)| {
        let a = caches(&systems)?;
        let b = caches(&systems)?;
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.p_bar(), y.p_bar());
            prop_assert_eq!(x.traces(30).map_err(fail)?, y.traces(30).map_err(fail)?);
        }
        let cfg = SolverConfig {
            max_iter: 2_000,
            ..SolverConfig::default()
        };
        let r_total = systems.len() as f64 / 2.0;
        let s1 = solve_rate_allocation(&a, r_total, fp, &cfg).map_err(fail)?;
        let s2 = solve_rate_allocation(&b, r_total, fp, &cfg).map_err(fail)?;
        prop_assert_eq!(s1.rates, s2.rates);
        prop_assert_eq!(s1.trace, s2.trace);
        let g = GreedyConfig {
            horizon: 200,
            ..GreedyConfig::default()
        };
        let g1 = greedy_schedule(&a, fp, 1, &g).map_err(fail)?;
        let g2 = greedy_schedule(&b, fp, 1, &g).map_err(fail)?;
        prop_assert_eq!(g1.actions, g2.actions);
        Ok(())
    })
}

fn rate_identity(cases: u32) -> Result<(), String> {
    let strategy = prop_oneof![1e-4f64..=1.0, (1usize..50).prop_map(|k| 1.0 / k as f64)];
    run(cases, strategy, |r| {
        let p = threshold_from_rate(r).map_err(fail)?;
        prop_assert!((0.0..=1.0).contains(&p.p));
        prop_assert!((1.0 / (p.eta as f64 + 2.0 - p.p) - r).abs() <= 1e-12, "{r} -> {p:?}");
        Ok(())
    })
}

fn rate_cost_nonincreasing(cases: u32) -> Result<(), String> {
    let strategy = (system(), 0.01f64..=1.0, 0.0f64..1.0);
    run(cases, strategy, |(sys, r, frac)| {
        let c = cache(&sys)?;
        let r2 = r + frac * (1.0 - r);
        let j1 = rate_cost(r, &c).map_err(fail)?;
        let j2 = rate_cost(r2, &c).map_err(fail)?;
        prop_assert!(j2 <= j1 + 1e-12 * j1.max(1.0), "J({r2}) = {j2} > J({r}) = {j1}");
        Ok(())
    })
}

fn rate_cost_continuity(cases: u32) -> Result<(), String> {
    run(cases, system(), |sys| {
        let c = cache(&sys)?;
        for beta in 1..=10usize {
            let at = 1.0 / beta as f64;
            let j = rate_cost(at, &c).map_err(fail)?;
            let left = rate_cost(at - 1e-8, &c).map_err(fail)?;
            prop_assert!((left - j).abs() <= 1e-5 * j, "jump {} at 1/{beta}", left - j);
            if beta > 1 {
                let right = rate_cost(at + 1e-8, &c).map_err(fail)?;
                prop_assert!((right - j).abs() <= 1e-5 * j);
            }
        }
        Ok(())
    })
}

fn subgradient_sign(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(system(), 1..=5), fairness()).prop_flat_map(|(s, fp)| {
        let n = s.len();
        (Just(s), Just(fp), prop::collection::vec(0.02f64..=1.0, n))
    });
    run(cases, strategy, |(systems, fp, r)| {
        let c = caches(&systems)?;
        let kappa = match subgradient(&RateVector(r), &c, fp) {
            Ok(k) => k,
            Err(_) => return Err(TestCaseError::reject("objective not representable")),
        };
        for k in kappa {
            prop_assert!(k <= 0.0, "κ = {k}");
        }
        Ok(())
    })
}

fn solver_iterates_stay_feasible(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(system(), 1..=5), fairness(), 0.2f64..0.9);
    run(cases, strategy, |(systems, fp, share)| {
        let c = caches(&systems)?;
        let n = c.len();
        let r_total = share * n as f64;
        let cfg = SolverConfig {
            max_iter: 3_000,
            ..SolverConfig::default()
        };
        let problem = match RateProblem::new(&c, r_total, fp, cfg.epsilon) {
            Ok(p) => p,
            Err(_) => return Err(TestCaseError::reject("infeasible budget")),
        };
        let mut r = RateVector(vec![r_total / n as f64; n]);
        problem.clamp(&mut r.0);
        let mut nu = DualVector::zeros(2 * n + 1);
        for t in 1..=300 {
            let (nr, nn, _) = primal_dual_step(&r, &nu, t, &cfg, &problem).map_err(fail)?;
            for (v, lo) in nr.0.iter().zip(&problem.eval_lower) {
                prop_assert!(*v >= *lo && *v <= 1.0, "iterate {v} outside [{lo}, 1]");
            }
            prop_assert!(nn.0.iter().all(|&v| v >= 0.0));
            r = nr;
            nu = nn;
        }
        let sol = solve_rate_allocation(&c, r_total, fp, &cfg).map_err(fail)?;
        prop_assert!(sol.violation <= cfg.tol_violation, "violation {}", sol.violation);
        prop_assert!(sol.rates.sum() <= r_total + 1e-9);
        Ok(())
    })
}

fn empirical_threshold_cost(cases: u32) -> Result<(), String> {
    let strategy = (system(), 0.05f64..=1.0, any::<u64>());
    run(cases, strategy, |(sys, r, seed)| {
        let c = cache(&sys)?;
        let policy = threshold_from_rate(r).map_err(fail)?;
        let horizon = 200_000;
        let flags = realize_threshold_schedule(policy, horizon, seed);
        let mut tau = 0usize;
        let mut sum = 0.0;
        for &f in &flags {
            tau = if f { 0 } else { tau + 1 };
            sum += c.trace(tau).map_err(fail)?;
        }
        let empirical = sum / horizon as f64;
        let analytic = rate_cost(r, &c).map_err(fail)?;
        prop_assert!(close(empirical, analytic, 0.03), "{empirical} vs {analytic} at r = {r}");
        Ok(())
    })
}

fn telescoping_identity(cases: u32) -> Result<(), String> {
    let strategy = (system(), fairness(), 1usize..40);
    run(cases, strategy, |(sys, fp, d)| {
        let c = cache(&sys)?;
        let mut sum = 0.0;
        for tau in 0..d {
            sum += one_stage_cost(tau, &c, fp).map_err(fail)?;
        }
        let t = c.traces(d).map_err(fail)?;
        let mean = t.iter().sum::<f64>() / d as f64;
        let direct = d as f64 * fp.apply(mean);
        prop_assert!(close(sum, direct, 1e-9), "{sum} vs {direct}");
        Ok(())
    })
}

fn monotone_stage_cost(cases: u32) -> Result<(), String> {
    let strategy = (system(), fairness(), 1usize..=20);
    run(cases, strategy, |(sys, fp, tau_max)| {
        let c = cache(&sys)?;
        let row = &stage_cost_table(&[c], fp, tau_max).map_err(fail)?[0];
        for w in row.windows(2) {
            prop_assert!(w[1] >= w[0] * (1.0 - 1e-12), "{} -> {}", w[0], w[1]);
        }
        Ok(())
    })
}

fn transition_totality(cases: u32) -> Result<(), String> {
    let strategy = (1usize..=5, 1usize..=5, 1usize..=12).prop_flat_map(|(n, z, tau_max)| {
        let z = z.min(n);
        (
            Just(n),
            Just(z),
            Just(tau_max),
            prop::collection::vec(0..=tau_max, n),
        )
    });
    run(cases, strategy, |(n, z, tau_max, tau)| {
        let phi = HoldingState::new(tau.clone(), tau_max).map_err(fail)?;
        for a in enumerate_actions(n, z).map_err(fail)? {
            let next = transition(&phi, &a, tau_max).map_err(fail)?;
            for i in 0..n {
                let want = if a.is_active(i) { 0 } else { (tau[i] + 1).min(tau_max) };
                prop_assert_eq!(next.tau()[i], want);
            }
        }
        Ok(())
    })
}

fn relaxation_inequality(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(system(), 1..=5), fairness(), 1usize..=5, 0usize..=6)
        .prop_flat_map(|(s, fp, z, extra)| {
            let n = s.len();
            (Just(s), Just(fp), serving_cycle(n, z.min(n), extra))
        });
    run(cases, strategy, |(systems, fp, cycle)| {
        let c = caches(&systems)?;
        let exact = cycle_objective(&cycle, &c, fp, OracleObjective::Exact).map_err(fail)?;
        let seg = cycle_objective(&cycle, &c, fp, OracleObjective::Segmented).map_err(fail)?;
        prop_assert!(exact <= seg * (1.0 + 1e-9), "{exact} > {seg}");
        if fp.q() == 0.0 {
            prop_assert!(close(exact, seg, 1e-9));
        }
        Ok(())
    })
}

fn entropy_bounds(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(1e-3f64..1e3, 1..=8), 1e-3f64..1e3);
    run(cases, strategy, |(costs, level)| {
        let n = costs.len() as f64;
        let h = entropy_measure(&costs).map_err(fail)?;
        prop_assert!(h >= -1e-12 && h <= n.log2() + 1e-12, "H = {h}");
        let uniform = entropy_measure(&vec![level; costs.len()]).map_err(fail)?;
        prop_assert!((uniform - n.log2()).abs() <= 1e-12);
        Ok(())
    })
}

fn cycle_average_exactness(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(system(), 1..=5), 1usize..=5, 0usize..=5).prop_flat_map(
        |(s, z, extra)| {
            let n = s.len();
            (Just(s), serving_cycle(n, z.min(n), extra))
        },
    );
    run(cases, strategy, |(systems, cycle)| {
        let c = caches(&systems)?;
        let fp = FairnessParam::efficiency();
        let periodic = evaluate_schedule(
            &Schedule::Periodic {
                prefix: vec![],
                cycle: cycle.clone(),
            },
            &c,
            fp,
        )
        .map_err(fail)?;
        let steps: Vec<ActionMask> = cycle.iter().cycle().take(100 * cycle.len()).cloned().collect();
        let explicit = evaluate_schedule(&Schedule::Explicit(steps), &c, fp).map_err(fail)?;
        for (a, b) in explicit.per_sensor_j.iter().zip(&periodic.per_sensor_j) {
            prop_assert!((a - b).abs() <= 0.01 * b, "{a} vs {b}");
        }
        Ok(())
    })
}

fn greedy_cardinality(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(system(), 1..=5), fairness(), 1usize..=5);
    run(cases, strategy, |(systems, fp, z)| {
        let c = caches(&systems)?;
        let z = z.min(c.len());
        let cfg = GreedyConfig {
            horizon: 300,
            ..GreedyConfig::default()
        };
        let run = match greedy_schedule(&c, fp, z, &cfg) {
            Ok(r) => r,
            Err(_) => return Err(TestCaseError::reject("stage cost not representable")),
        };
        for a in &run.actions {
            prop_assert_eq!(a.active_count(), z);
        }
        Ok(())
    })
}

fn rollout_matches_gain(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(scalar_system(0.5..1.3), 2..=3), fairness());
    run(cases, strategy, |(systems, fp)| {
        let c = caches(&systems)?;
        let cfg = MdpConfig {
            tau_max: 12,
            ..MdpConfig::default()
        };
        let (table, policy) = relative_value_iteration(&c, fp, 1, &cfg).map_err(fail)?;
        prop_assert!(table.converged);
        let costs = stage_cost_table(&c, fp, cfg.tau_max).map_err(fail)?;
        let rollout = rollout_policy(&policy, &costs, &HoldingState::zeros(c.len()), 2_000).map_err(fail)?;
        let (m, _) = detect_period(&rollout.actions).ok_or_else(|| fail("no period"))?;
        let tail = rollout.tail_average(m + 1);
        let gain = table.average_cost_estimate;
        prop_assert!(close(tail, gain, 5e-3), "rollout {tail} vs gain {gain}");
        Ok(())
    })
}

fn oracle_bound_chain(cases: u32) -> Result<(), String> {
    const PERIOD_CAP: usize = 8;
    let strategy = (prop::collection::vec(scalar_system(0.6..1.3), 2), fairness());
    run(cases, strategy, |(systems, fp)| {
        let c = caches(&systems)?;
        let oracle = brute_force_periodic_oracle(&c, fp, 1, PERIOD_CAP, OracleObjective::Exact)
            .map_err(fail)?
            .value;
        let sol = solve_rate_allocation(&c, 1.0, fp, &SolverConfig::default()).map_err(fail)?;
        let g_star = sol.objective;
        prop_assert!(g_star <= oracle * (1.0 + 1e-3), "g* {g_star} > oracle {oracle}");

        let greedy = greedy_schedule(&c, fp, 1, &GreedyConfig { horizon: 2_000, ..GreedyConfig::default() })
            .map_err(fail)?;
        let cfg = MdpConfig {
            tau_max: 16,
            ..MdpConfig::default()
        };
        let (table, policy) = relative_value_iteration(&c, fp, 1, &cfg).map_err(fail)?;
        let costs = stage_cost_table(&c, fp, cfg.tau_max).map_err(fail)?;
        let rollout = rollout_policy(&policy, &costs, &HoldingState::zeros(2), 2_000).map_err(fail)?;
        let mdp_period = detect_period(&rollout.actions);
        // A saturated holding time is charged c(tau_max), below the true cost.
        let saturates = rollout.states.iter().any(|s| s.tau().iter().any(|&t| t >= cfg.tau_max));
        if !saturates {
            prop_assert!(
                g_star <= table.average_cost_estimate * (1.0 + 1e-3),
                "g* {g_star} > gain {}",
                table.average_cost_estimate
            );
        }
        for (actions, period) in [(&greedy.actions, greedy.period), (&rollout.actions, mdp_period)] {
            let schedule = Schedule::from_sequence(actions, period);
            let report = evaluate_schedule(&schedule, &c, fp).map_err(fail)?;
            prop_assert!(g_star <= report.q_objective * (1.0 + 1e-3));
            let serves_all = actions.iter().any(|a| a.is_active(0)) && actions.iter().any(|a| a.is_active(1));
            if matches!(period, Some((_, l)) if l <= PERIOD_CAP) && serves_all {
                prop_assert!(
                    oracle <= report.q_objective * (1.0 + 1e-9),
                    "oracle {oracle} above a cycle of length <= {PERIOD_CAP}: {}",
                    report.q_objective
                );
            }
        }
        Ok(())
    })
}

/// Average cost of value iteration on `systems` at truncations `tau_max` and
/// `tau_max + extra`.
pub fn truncation_pair(
    systems: &[SystemModel],
    fp: FairnessParam,
    z: usize,
    tau_max: usize,
    extra: usize,
) -> Result<(f64, f64), String> {
    let c: Vec<SteadyStateCache> = systems
        .iter()
        .map(|s| steady_state(s, DEFAULT_FIXED_POINT_TOL, 1_000_000))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let gain = |t: usize| -> Result<f64, String> {
        let cfg = MdpConfig {
            tau_max: t,
            ..MdpConfig::default()
        };
        let (table, _) = relative_value_iteration(&c, fp, z, &cfg).map_err(|e| e.to_string())?;
        if !table.converged {
            return Err(format!("value iteration at tau_max = {t} did not converge"));
        }
        Ok(table.average_cost_estimate)
    };
    Ok((gain(tau_max)?, gain(tau_max + extra)?))
}
