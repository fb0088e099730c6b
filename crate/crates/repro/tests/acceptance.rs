use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fairsched::estimation::DEFAULT_FIXED_POINT_TOL;
use fairsched::harness::{brute_force_periodic_oracle, grid_search_rate_oracle, OracleObjective};
use fairsched::mdp::{detect_period, relative_value_iteration, MdpConfig};
use fairsched::rate::{
    rate_cost, realize_threshold_schedule, solve_rate_allocation, threshold_from_rate, SolverConfig,
};
use fairsched::systems::{case1_systems, case2_systems, BENCHMARK_BUDGET, TABLE_Q_VALUES};
use fairsched::{steady_state, FairnessParam, SteadyStateCache, SystemModel};
use fairsched_cli::{compute_cells, parse_config, Case, CellResult, ExperimentConfig, Method};
use fairsched_repro::properties::{run_all, truncation_pair, DEFAULT_CASES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new() -> Self {
        Self { pass: true, detail: String::new() }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.pass = false;
            if !self.detail.is_empty() {
                self.detail.push_str("; ");
            }
            self.detail.push_str(&what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        if self.pass && self.detail.is_empty() {
            self.detail = what.into();
        }
    }
}

fn config(name: &str) -> ExperimentConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    parse_config(&p).unwrap_or_else(|e| panic!("{e}"))
}

fn caches(systems: &[SystemModel]) -> Vec<SteadyStateCache> {
    systems
        .iter()
        .map(|s| steady_state(s, DEFAULT_FIXED_POINT_TOL, 1_000_000).expect("steady state"))
        .collect()
}

fn cell(cells: &[CellResult], m: Method, q: f64) -> &CellResult {
    cells
        .iter()
        .find(|c| c.method == m && c.q == q)
        .unwrap_or_else(|| panic!("no {m} cell at q={q}"))
}

fn within_rel(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

fn within_abs(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn subsets(n: usize, max: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect::<Vec<_>>())
        .filter(|s| s.len() <= max)
        .collect()
}

fn criterion1(case2: &[CellResult]) -> Verdict {
    let mut v = Verdict::new();
    // (method, q, total, entropy, relative)
    let rows = [
        (Method::Mdp, 0.0, 39.91, 2.16, Some((1.01, 0.03))),
        (Method::Greedy, 0.0, 41.70, 2.27, Some((1.05, 0.05))),
        (Method::Mdp, 2.0, 40.50, 2.29, None),
        (Method::Greedy, 20.0, 42.01, 2.29, None),
    ];
    let mut seen = Vec::new();
    for (m, q, total, entropy, relative) in rows {
        let c = cell(case2, m, q);
        let r = &c.report;
        seen.push(format!("{m} q={q}: {:.3}/{:.3}", r.total_cost, r.entropy_bits));
        v.check(
            within_rel(r.total_cost, total, 0.02),
            format!("{m} q={q} total {:.3} vs {total} +-2%", r.total_cost),
        );
        v.check(
            within_abs(r.entropy_bits, entropy, 0.05),
            format!("{m} q={q} entropy {:.3} vs {entropy} +-0.05", r.entropy_bits),
        );
        if let Some((rel, tol)) = relative {
            let got = r.relative_performance.unwrap_or(f64::NAN);
            v.check(within_abs(got, rel, tol), format!("{m} q={q} relative {got:.4} vs {rel} +-{tol}"));
        }
    }
    let mdp_max = case2.iter().filter(|c| c.method == Method::Mdp).map(|c| c.elapsed).max().unwrap();
    let greedy_max =
        case2.iter().filter(|c| c.method == Method::Greedy).map(|c| c.elapsed).max().unwrap();
    v.check(mdp_max < Duration::from_secs(300), format!("value iteration took {mdp_max:.1?}"));
    v.check(greedy_max < Duration::from_secs(1), format!("greedy took {greedy_max:.2?}"));
    v.note(format!(
        "{}; slowest value iteration {mdp_max:.1?}, greedy {greedy_max:.2?}",
        seen.join(", ")
    ));
    v
}

fn nondecreasing_entropy(values: &[f64]) -> Result<(), String> {
    let mut inversions = 0;
    for w in values.windows(2) {
        let drop = w[0] - w[1];
        if drop > 0.0 {
            inversions += 1;
            if drop > 0.01 || inversions > 1 {
                return Err(format!("entropy {values:.3?}"));
            }
        }
    }
    Ok(())
}

fn criterion2(case1: &[CellResult], case2: &[CellResult]) -> Verdict {
    let mut v = Verdict::new();
    let series = [
        ("case 1 subgradient", case1, Method::Subgradient),
        ("case 2 mdp", case2, Method::Mdp),
        ("case 2 greedy", case2, Method::Greedy),
    ];
    for (name, cells, m) in series {
        let reports: Vec<_> = TABLE_Q_VALUES.iter().map(|&q| &cell(cells, m, q).report).collect();
        let totals: Vec<f64> = reports.iter().map(|r| r.total_cost).collect();
        let entropy: Vec<f64> = reports.iter().map(|r| r.entropy_bits).collect();
        v.check(
            totals.windows(2).all(|w| w[1] >= w[0]),
            format!("{name} totals {totals:.3?} not nondecreasing"),
        );
        if let Err(e) = nondecreasing_entropy(&entropy) {
            v.check(false, format!("{name} {e}"));
        }
        if m == Method::Subgradient {
            let spread: Vec<f64> = reports
                .iter()
                .map(|r| {
                    let max = r.per_sensor_j.iter().cloned().fold(f64::MIN, f64::max);
                    let min = r.per_sensor_j.iter().cloned().fold(f64::MAX, f64::min);
                    max - min
                })
                .collect();
            v.check(
                spread.windows(2).all(|w| w[1] < w[0]),
                format!("{name} spread {spread:.3?} not strictly decreasing"),
            );
        }
    }
    v.note(format!("q in {TABLE_Q_VALUES:?}, three series"));
    v
}

fn criterion3() -> Verdict {
    let mut v = Verdict::new();
    let mut systems = case1_systems();
    let c2 = case2_systems();
    systems.push(c2[2].clone());
    systems.push(c2[4].clone());
    let all = caches(&systems);
    let cfg = SolverConfig::default();
    let (mut worst, mut slowest, mut count) = (0.0f64, Duration::ZERO, 0);
    let start = Instant::now();
    for idx in subsets(all.len(), 3) {
        let sub: Vec<SteadyStateCache> = idx.iter().map(|&i| all[i].clone()).collect();
        let r_total = 0.4 * sub.len() as f64;
        for q in TABLE_Q_VALUES {
            let fp = FairnessParam::new(q).unwrap();
            let t = Instant::now();
            let sol = match solve_rate_allocation(&sub, r_total, fp, &cfg) {
                Ok(s) => s,
                Err(e) => {
                    v.check(false, format!("{idx:?} q={q}: {e}"));
                    continue;
                }
            };
            slowest = slowest.max(t.elapsed());
            let (oracle, _) = grid_search_rate_oracle(&sub, fp, r_total, 1e-3, cfg.epsilon).unwrap();
            let signed = (sol.objective - oracle) / oracle.abs();
            let rel = signed.abs();
            worst = worst.max(rel);
            count += 1;
            v.check(
                rel <= 5e-3,
                format!("{idx:?} q={q}: solver {:.6e} vs oracle {oracle:.6e} ({signed:+.2e})", sol.objective),
            );
            v.check(sol.violation <= 1e-6, format!("{idx:?} q={q}: violation {:.2e}", sol.violation));
        }
    }
    v.check(slowest < Duration::from_secs(10), format!("slowest solve {slowest:.1?}"));
    v.note(format!(
        "{count} instances, worst relative gap {worst:.2e}, slowest solve {slowest:.2?}, total {:.1?}",
        start.elapsed()
    ));
    v
}

fn criterion4() -> Verdict {
    let mut v = Verdict::new();
    let cache = &caches(&case1_systems()[..1])[0];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let horizon = 1_000_000;
    let (mut worst_rate, mut worst_cost) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let r = 1.0 - rng.random::<f64>();
        let policy = threshold_from_rate(r).unwrap();
        let seq = realize_threshold_schedule(policy, horizon, 100 + i);
        let mut tau = 0usize;
        let (mut sent, mut total) = (0usize, 0.0);
        for &z in &seq {
            tau = if z { 0 } else { tau + 1 };
            sent += z as usize;
            total += cache.trace(tau).unwrap();
        }
        let emp_rate = sent as f64 / horizon as f64;
        let emp_cost = total / horizon as f64;
        let target = rate_cost(r, cache).unwrap();
        let rel = (emp_cost - target).abs() / target;
        worst_rate = worst_rate.max((emp_rate - r).abs());
        worst_cost = worst_cost.max(rel);
        v.check((emp_rate - r).abs() <= 2e-3, format!("r={r:.4}: empirical rate {emp_rate:.4}"));
        v.check(rel <= 5e-3, format!("r={r:.4}: empirical cost {emp_cost:.4} vs {target:.4}"));
    }
    v.note(format!("20 rates, worst rate error {worst_rate:.2e}, worst cost error {worst_cost:.2e}"));
    v
}

fn criterion5() -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    let pairs = [("identical", 1.2, 1.2), ("asymmetric", 1.2, 0.9)];
    let mut worst = 0.0f64;
    for (name, a1, a2) in pairs {
        let systems = [
            SystemModel::scalar("a", a1, 1.0, 1.0, 1.0).unwrap(),
            SystemModel::scalar("b", a2, 1.0, 1.0, 1.0).unwrap(),
        ];
        let c = caches(&systems);
        for q in TABLE_Q_VALUES {
            let fp = FairnessParam::new(q).unwrap();
            let cfg = MdpConfig { tau_max: 20, ..MdpConfig::default() };
            let (table, _) = relative_value_iteration(&c, fp, 1, &cfg).unwrap();
            let oracle = brute_force_periodic_oracle(&c, fp, 1, 12, OracleObjective::Segmented).unwrap();
            let rel = (table.average_cost_estimate - oracle.value).abs() / oracle.value.abs();
            worst = worst.max(rel);
            v.check(table.converged, format!("{name} q={q}: value iteration did not converge"));
            v.check(
                rel <= 1e-6,
                format!("{name} q={q}: {} vs oracle {} ({rel:.2e})", table.average_cost_estimate, oracle.value),
            );
        }
    }
    let elapsed = start.elapsed();
    v.check(elapsed < Duration::from_secs(5), format!("took {elapsed:.1?}"));
    v.note(format!("8 instances, worst relative difference {worst:.2e}, {elapsed:.2?}"));
    v
}

fn criterion6(runs: &[(&str, &[CellResult])]) -> Verdict {
    let mut v = Verdict::new();
    let tol = 1e-3;
    let (mut count, mut min_ratio) = (0, f64::INFINITY);
    for (name, cells) in runs {
        for c in cells.iter().filter(|c| matches!(c.method, Method::Mdp | Method::Greedy)) {
            let Some(bound) = c.relaxation.as_ref() else {
                v.check(false, format!("{name} {} q={}: no relaxation", c.method, c.q));
                continue;
            };
            let g = bound.objective;
            v.check(bound.converged, format!("{name} q={}: relaxation did not converge", c.q));
            let achieved = c.report.q_objective;
            v.check(
                g <= achieved * (1.0 + tol),
                format!("{name} {} q={}: g* {g:.6e} > cost {achieved:.6e}", c.method, c.q),
            );
            if let Some(avg) = c.mdp_average {
                v.check(
                    g <= avg * (1.0 + tol),
                    format!("{name} mdp q={}: g* {g:.6e} > average {avg:.6e}", c.q),
                );
            }
            min_ratio = min_ratio.min(achieved / g);
            count += 1;
        }
    }
    v.note(format!("{count} cells, smallest cost/g* ratio {min_ratio:.4}"));
    v
}

fn sensor_column(c: &CellResult, sensor: usize) -> Option<Vec<bool>> {
    let (_, csv) = c.files.iter().find(|(n, _)| n == "schedule.csv")?;
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').nth(sensor + 1).map(|b| b == "1"))
        .collect()
}

fn criterion7(case2: &[CellResult]) -> Verdict {
    let mut v = Verdict::new();
    let mut found = Vec::new();
    for q in TABLE_Q_VALUES {
        for m in [Method::Mdp, Method::Greedy] {
            let c = cell(case2, m, q);
            match c.report.period {
                Some((mm, l)) => found.push(format!("{m} q={q} ({mm},{l})")),
                None => v.check(false, format!("{m} q={q}: no period")),
            }
            if q == 2.0 {
                match sensor_column(c, 1) {
                    Some(col) => {
                        let p = detect_period(&col);
                        v.check(p.is_some(), format!("{m} q=2: sensor 2 not periodic"));
                        v.check(col.iter().any(|&b| b), format!("{m} q=2: sensor 2 never transmits"));
                    }
                    None => v.check(false, format!("{m} q=2: schedule.csv unreadable")),
                }
            }
        }
    }
    v.note(found.join(", "));
    v
}

fn criterion8() -> Verdict {
    let mut v = Verdict::new();
    let start = Instant::now();
    for s in run_all(DEFAULT_CASES) {
        if let Err(e) = &s.result {
            v.check(false, format!("{}: {e}", s.name));
        }
    }
    let fp = FairnessParam::efficiency();
    match truncation_pair(&case2_systems(), fp, BENCHMARK_BUDGET, 12, 5) {
        Ok((g12, g17)) => {
            let rel = (g17 - g12).abs() / g12;
            v.check(rel < 1e-3, format!("truncation 12 vs 17: {g12} vs {g17} ({rel:.2e})"));
            v.note(format!("truncation 12 vs 17 relative change {rel:.2e}"));
        }
        Err(e) => v.check(false, format!("truncation: {e}")),
    }
    let elapsed = start.elapsed();
    v.check(elapsed < Duration::from_secs(120), format!("suites took {elapsed:.1?}"));
    if v.pass {
        v.detail = format!("{}, {DEFAULT_CASES} cases per suite, {elapsed:.1?}", v.detail);
    }
    v
}

/// Optional positional arguments select a subset of criteria by number.
fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |i: usize| selected.is_empty() || selected.contains(&i);

    let case1 = config("case1_paper.json");
    let case2 = config("case2_paper.json");
    let case1_cells = OnceLock::new();
    let case2_cells = OnceLock::new();
    let case1_act_cells = OnceLock::new();
    let c1 = || case1_cells.get_or_init(|| compute_cells(&case1).expect("case 1 run")).as_slice();
    let c2 = || case2_cells.get_or_init(|| compute_cells(&case2).expect("case 2 run")).as_slice();
    let c1a = || {
        case1_act_cells
            .get_or_init(|| {
                let mut cfg = case1.clone();
                cfg.case = Case::Activation;
                cfg.method = Method::All;
                cfg.check().expect("case 1 as activation");
                compute_cells(&cfg).expect("case 1 activation run")
            })
            .as_slice()
    };

    let criteria: [&dyn Fn() -> Verdict; 8] = [
        &|| criterion1(c2()),
        &|| criterion2(c1(), c2()),
        &criterion3,
        &criterion4,
        &criterion5,
        &|| criterion6(&[("case2_paper", c2()), ("case1_paper", c1a())]),
        &|| criterion7(c2()),
        &criterion8,
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (i, run) in criteria.iter().enumerate() {
        if !wanted(i + 1) {
            continue;
        }
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {tag} {}", i + 1, v.detail);
        ran += 1;
        failed += (!v.pass) as usize;
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
