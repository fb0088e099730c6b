//! Runs every (method, q) cell of a config and writes its artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fairsched::greedy::{greedy_schedule, GreedyConfig, GreedyError};
use fairsched::harness::{
    evaluate_schedule, report_csv_header, CostReport, HarnessError, Schedule,
};
use fairsched::mdp::{
    detect_period, dump_value_table, relative_value_iteration, rollout_policy, stage_cost_table,
    trajectory_csv, ActionMask, MdpError,
};
use fairsched::rate::{realize_threshold_schedule, solve_rate_allocation, RateError, RateSolution};
use fairsched::{EstimationError, FairnessParam, SteadyStateCache};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Case, ConfigError, ExperimentConfig, Method};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("steady state of {label}: {source}")]
    SteadyState {
        label: String,
        #[source]
        source: EstimationError,
    },
    #[error("{method} at q = {q}: {message}")]
    Cell {
        method: Method,
        q: f64,
        message: String,
    },
}

/// Command-line values that replace the corresponding config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub case: Option<Case>,
    pub method: Option<Method>,
    /// Replaces `q_values` when nonempty.
    pub q: Vec<f64>,
    pub seed: Option<u64>,
    pub tau_max: Option<usize>,
    /// Caps both the rate-solver iterations and the value-iteration sweeps.
    pub max_iter: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// Applies the overrides and rechecks the result.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), ConfigError> {
        if let Some(c) = self.case {
            cfg.case = c;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if !self.q.is_empty() {
            cfg.q_values = self.q.clone();
            if let Some(t) = &mut cfg.table_q_values {
                t.retain(|q| self.q.contains(q));
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.tau_max {
            cfg.mdp.tau_max = t;
        }
        if let Some(m) = self.max_iter {
            cfg.solver.max_iter = m;
            cfg.mdp.max_sweeps = m;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        cfg.check()
            .map_err(|(key, message)| ConfigError::Override(format!("{key}: {message}")))
    }
}

/// Outcome of one (method, q) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub method: Method,
    pub q: f64,
    pub report: CostReport,
    pub converged: bool,
    /// Long-run average stage cost reported by value iteration.
    pub mdp_average: Option<f64>,
    /// Rate-solver solution: the allocation itself for `subgradient`, the
    /// `R = Z` relaxation for the activation methods.
    pub relaxation: Option<RateSolution>,
    /// `(file name, contents)` written under the cell directory.
    pub files: Vec<(String, String)>,
    /// Wall time spent on the cell, excluding the shared relaxation.
    pub elapsed: Duration,
}

impl CellResult {
    pub fn dir(&self, root: &Path) -> PathBuf {
        root.join(self.method.as_str()).join(format!("q={}", self.q))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub cells: Vec<CellResult>,
    pub summary: String,
    pub root: PathBuf,
}

impl RunOutcome {
    pub fn all_converged(&self) -> bool {
        self.cells.iter().all(|c| c.converged)
    }

    /// 0 when every cell converged, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_converged() {
            0
        } else {
            2
        }
    }
}

fn cell_err(method: Method, q: f64, e: impl ToString) -> RunError {
    RunError::Cell {
        method,
        q,
        message: e.to_string(),
    }
}

pub fn steady_states(cfg: &ExperimentConfig) -> Result<Vec<SteadyStateCache>, RunError> {
    cfg.systems
        .iter()
        .map(|s| {
            s.model().steady_state().map_err(|source| RunError::SteadyState {
                label: s.model().label.clone(),
                source,
            })
        })
        .collect()
}

fn rates_csv(sol: &RateSolution, caches: &[SteadyStateCache], cfg: &ExperimentConfig) -> Result<String, RateError> {
    let costs = sol.per_sensor_costs(caches)?;
    let policies = sol.policies()?;
    let mut out = String::from("sensor,label,rate,eta,p,J\n");
    for (i, ((r, p), j)) in sol.rates.0.iter().zip(&policies).zip(&costs).enumerate() {
        let label = &cfg.systems[i].model().label;
        let _ = writeln!(out, "{},{label},{r},{},{},{j}", i + 1, p.eta, p.p);
    }
    Ok(out)
}

fn solver_trace_csv(sol: &RateSolution) -> String {
    let mut out = String::from("iter,objective,violation_norm,step_size\n");
    for rec in &sol.trace {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            rec.iter, rec.objective, rec.violation_norm, rec.step_size
        );
    }
    out
}

/// Realized threshold schedules with the stage cost `Σ_i Tr h^(τ_i)(P̄_i)`.
fn threshold_schedule_csv(
    sol: &RateSolution,
    caches: &[SteadyStateCache],
    horizon: usize,
    seed: u64,
) -> Result<String, RateError> {
    let flags: Vec<Vec<bool>> = sol
        .policies()?
        .into_iter()
        .enumerate()
        .map(|(i, p)| realize_threshold_schedule(p, horizon, seed.wrapping_add(i as u64)))
        .collect();
    let n = caches.len();
    let mut tau = vec![0usize; n];
    let mut actions = Vec::with_capacity(horizon);
    let mut costs = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let zeta: Vec<bool> = flags.iter().map(|f| f[k]).collect();
        let mut cost = 0.0;
        for (i, t) in tau.iter_mut().enumerate() {
            *t = if zeta[i] { 0 } else { *t + 1 };
            cost += caches[i].trace(*t).unwrap_or(f64::INFINITY);
        }
        actions.push(ActionMask::from_bits(zeta));
        costs.push(cost);
    }
    Ok(trajectory_csv(&actions, &costs))
}

fn report_csv(report: &CostReport, method: Method, q: f64) -> String {
    format!(
        "{}\n{}\n",
        report_csv_header(report.per_sensor_j.len()),
        report.csv_row(method.as_str(), q)
    )
}

fn rate_cell(
    cfg: &ExperimentConfig,
    caches: &[SteadyStateCache],
    q: f64,
) -> Result<CellResult, RunError> {
    let m = Method::Subgradient;
    let fp = FairnessParam::new(q).map_err(|e| cell_err(m, q, e))?;
    let budget = match cfg.case {
        Case::Rate => cfg.budget,
        Case::Activation => cfg.activation_budget() as f64,
    };
    let sol = solve_rate_allocation(caches, budget, fp, &cfg.solver.to_solver(cfg.seed))
        .map_err(|e| cell_err(m, q, e))?;
    let costs = sol.per_sensor_costs(caches).map_err(|e| cell_err(m, q, e))?;
    let mut report = CostReport::from_costs(costs, fp);
    report.attach_gap(sol.objective);
    let files = vec![
        ("report.csv".into(), report_csv(&report, m, q)),
        ("trace.csv".into(), solver_trace_csv(&sol)),
        ("rates.csv".into(), rates_csv(&sol, caches, cfg).map_err(|e| cell_err(m, q, e))?),
        (
            "schedule.csv".into(),
            threshold_schedule_csv(&sol, caches, cfg.solver.schedule_horizon, cfg.seed)
                .map_err(|e| cell_err(m, q, e))?,
        ),
    ];
    Ok(CellResult {
        method: m,
        q,
        report,
        converged: sol.converged,
        mdp_average: None,
        relaxation: Some(sol),
        files,
        elapsed: Duration::ZERO,
    })
}

fn finish_report(
    actions: &[ActionMask],
    period: Option<(usize, usize)>,
    caches: &[SteadyStateCache],
    fp: FairnessParam,
    bound: &RateSolution,
) -> Result<CostReport, HarnessError> {
    let schedule = Schedule::from_sequence(actions, period);
    let mut report = evaluate_schedule(&schedule, caches, fp)?;
    report.attach_gap(bound.objective);
    Ok(report)
}

fn mdp_cell(
    cfg: &ExperimentConfig,
    caches: &[SteadyStateCache],
    q: f64,
    bound: &RateSolution,
) -> Result<CellResult, RunError> {
    let m = Method::Mdp;
    let err = |e: MdpError| cell_err(m, q, e);
    let fp = FairnessParam::new(q).map_err(|e| cell_err(m, q, e))?;
    let z = cfg.activation_budget();
    let mcfg = cfg.mdp.to_mdp();
    let (table, policy) = relative_value_iteration(caches, fp, z, &mcfg).map_err(err)?;
    let costs = stage_cost_table(caches, fp, mcfg.tau_max).map_err(err)?;
    let rollout =
        rollout_policy(&policy, &costs, &mcfg.start_state(caches.len()), cfg.mdp.horizon).map_err(err)?;
    let period = detect_period(&rollout.actions);
    let report = finish_report(&rollout.actions, period, caches, fp, bound)
        .map_err(|e| cell_err(m, q, e))?;
    let mut trace = String::from("sweep,span,average_cost\n");
    for rec in &table.history {
        let _ = writeln!(trace, "{},{},{}", rec.sweep, rec.span, rec.average_cost);
    }
    let mut files = vec![
        ("report.csv".into(), report_csv(&report, m, q)),
        ("trace.csv".into(), trace),
        ("schedule.csv".into(), rollout.to_csv()),
    ];
    if cfg.mdp.dump_policy {
        files.push(("policy.txt".into(), dump_value_table(&table, &policy)));
    }
    Ok(CellResult {
        method: m,
        q,
        report,
        converged: table.converged && bound.converged,
        mdp_average: Some(table.average_cost_estimate),
        relaxation: Some(bound.clone()),
        files,
        elapsed: Duration::ZERO,
    })
}

fn greedy_cell(
    cfg: &ExperimentConfig,
    caches: &[SteadyStateCache],
    q: f64,
    bound: &RateSolution,
) -> Result<CellResult, RunError> {
    let m = Method::Greedy;
    let fp = FairnessParam::new(q).map_err(|e| cell_err(m, q, e))?;
    let gcfg = GreedyConfig {
        horizon: cfg.greedy.horizon,
        initial_tau: cfg.greedy.initial_tau.clone(),
        candidate: cfg.greedy.candidate.into(),
        ..Default::default()
    };
    let run = greedy_schedule(caches, fp, cfg.activation_budget(), &gcfg)
        .map_err(|e: GreedyError| cell_err(m, q, e))?;
    let report = finish_report(&run.actions, run.period, caches, fp, bound)
        .map_err(|e| cell_err(m, q, e))?;
    let mut trace = String::from("k,running_average\n");
    let mut total = 0.0;
    for (k, c) in run.costs.iter().enumerate() {
        total += c;
        let _ = writeln!(trace, "{k},{}", total / (k + 1) as f64);
    }
    let files = vec![
        ("report.csv".into(), report_csv(&report, m, q)),
        ("trace.csv".into(), trace),
        ("schedule.csv".into(), run.to_csv()),
    ];
    Ok(CellResult {
        method: m,
        q,
        report,
        converged: bound.converged,
        mdp_average: None,
        relaxation: Some(bound.clone()),
        files,
        elapsed: Duration::ZERO,
    })
}

/// Computes every cell in memory, in `q_values` order and then method order.
pub fn compute_cells(cfg: &ExperimentConfig) -> Result<Vec<CellResult>, RunError> {
    let caches = steady_states(cfg)?;
    let methods = cfg.methods();
    let cells: Vec<(f64, Method)> = cfg
        .q_values
        .iter()
        .flat_map(|&q| methods.iter().map(move |&m| (q, m)))
        .collect();
    let needs_bound = cfg.case == Case::Activation
        && methods.iter().any(|m| matches!(m, Method::Mdp | Method::Greedy));
    // The R = Z relaxation is shared by the MDP and greedy cells of one q.
    let bounds: Vec<Option<RateSolution>> = cfg
        .q_values
        .par_iter()
        .map(|&q| {
            if !needs_bound {
                return Ok(None);
            }
            rate_cell(cfg, &caches, q).map(|c| c.relaxation)
        })
        .collect::<Result<_, RunError>>()?;
    cells
        .par_iter()
        .map(|&(q, m)| {
            let qi = cfg.q_values.iter().position(|&v| v == q).expect("q from list");
            let start = Instant::now();
            let cell = match m {
                Method::Subgradient => rate_cell(cfg, &caches, q),
                Method::Mdp => mdp_cell(cfg, &caches, q, bounds[qi].as_ref().expect("bound")),
                Method::Greedy => greedy_cell(cfg, &caches, q, bounds[qi].as_ref().expect("bound")),
                Method::All => unreachable!("expanded before dispatch"),
            };
            cell.map(|c| CellResult { elapsed: start.elapsed(), ..c })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

/// Aligned plain-text summary, one row per cell.
pub fn summary_table(cfg: &ExperimentConfig, cells: &[CellResult]) -> String {
    let header = [
        "q", "method", "entropy", "total", "relative", "q_objective", "g_star", "period", "status",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for c in cells {
        let q = if cfg.is_table_q(c.q) {
            format!("{}*", c.q)
        } else {
            c.q.to_string()
        };
        let period = c
            .report
            .period
            .map_or_else(|| "-".into(), |(m, l)| format!("({m},{l})"));
        rows.push(vec![
            q,
            c.method.to_string(),
            format!("{:.3}", c.report.entropy_bits),
            format!("{:.3}", c.report.total_cost),
            fmt_opt(c.report.relative_performance, 4),
            format!("{:.6e}", c.report.q_objective),
            c.report
                .gap_lower_bound
                .map_or_else(|| "-".into(), |g| format!("{g:.6e}")),
            period,
            if c.converged { "ok" } else { "not converged" }.into(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (s, &w))| if j < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    if cfg.table_q_values.is_some() {
        out.push_str("* q value in the comparison table subset\n");
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `{output}/{name}/{method}/q={q}/...` plus `summary.csv` and
/// `summary.txt` under `{output}/{name}`.
pub fn write_artifacts(cfg: &ExperimentConfig, cells: &[CellResult], summary: &str) -> Result<PathBuf, RunError> {
    let root = cfg.output.join(&cfg.name);
    for c in cells {
        let dir = c.dir(&root);
        fs::create_dir_all(&dir).map_err(|source| RunError::Io {
            path: dir.clone(),
            source,
        })?;
        for (name, contents) in &c.files {
            write_file(&dir.join(name), contents)?;
        }
    }
    fs::create_dir_all(&root).map_err(|source| RunError::Io {
        path: root.clone(),
        source,
    })?;
    let mut csv = report_csv_header(cfg.systems.len());
    csv.push('\n');
    for c in cells {
        csv.push_str(&c.report.csv_row(c.method.as_str(), c.q));
        csv.push('\n');
    }
    write_file(&root.join("summary.csv"), &csv)?;
    write_file(&root.join("summary.txt"), summary)?;
    write_file(&root.join("config.json"), &cfg.to_json())?;
    Ok(root)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let cells = compute_cells(cfg)?;
    let summary = summary_table(cfg, &cells);
    let root = write_artifacts(cfg, &cells, &summary)?;
    Ok(RunOutcome {
        cells,
        summary,
        root,
    })
}
