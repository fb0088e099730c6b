//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "name": "case1_paper",
//!   "case": "rate",                  // "rate" | "activation"
//!   "budget": 2,                     // R for rate, Z for activation
//!   "q_values": [0, 0.5, 2, 20],
//!   "table_q_values": [0, 2],        // optional, marked in the summary
//!   "method": "all",                 // "subgradient" | "mdp" | "greedy" | "all"
//!   "seed": 0,
//!   "output": "out",
//!   "systems": [
//!     { "label": "sensor1", "A": [[1.2, 0], [0, 0]], "C": [[1, 0], [0, 1]],
//!       "Q": [[4, 0], [0, 1]], "R": [[1, 0], [0, 1]] }
//!   ],
//!   "solver": { ... }, "mdp": { ... }, "greedy": { ... }
//! }
//! ```
//!
//! The `solver`, `mdp` and `greedy` sections and their fields are optional.
//! Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fairsched::greedy::CandidateTime;
use fairsched::mdp::MdpConfig;
use fairsched::rate::SolverConfig;
use fairsched::SystemModel;
use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {field}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("command-line override: {0}")]
    Override(String),
    #[error("{path}:{line}: {message}")]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Rate,
    Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Subgradient,
    Mdp,
    Greedy,
    #[default]
    All,
}

impl Method {
    /// Concrete methods this selection runs under `case`.
    pub fn expand(self, case: Case) -> Vec<Method> {
        match (self, case) {
            (Method::All, Case::Rate) => vec![Method::Subgradient],
            (Method::All, Case::Activation) => vec![Method::Mdp, Method::Greedy],
            (m, _) => vec![m],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Subgradient => "subgradient",
            Method::Mdp => "mdp",
            Method::Greedy => "greedy",
            Method::All => "all",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Rate => "rate",
            Case::Activation => "activation",
        })
    }
}

impl FromStr for Case {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rate" => Ok(Case::Rate),
            "activation" => Ok(Case::Activation),
            _ => Err(format!("unknown case `{s}`, expected rate or activation")),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subgradient" => Ok(Method::Subgradient),
            "mdp" => Ok(Method::Mdp),
            "greedy" => Ok(Method::Greedy),
            "all" => Ok(Method::All),
            _ => Err(format!(
                "unknown method `{s}`, expected subgradient, mdp, greedy or all"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSpecRaw {
    #[serde(default)]
    label: String,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
}

/// One plant as written in the file, validated on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemSpecRaw", into = "SystemSpecRaw")]
pub struct SystemSpec {
    model: SystemModel,
}

impl SystemSpec {
    pub fn model(&self) -> &SystemModel {
        &self.model
    }
}

impl From<SystemModel> for SystemSpec {
    fn from(model: SystemModel) -> Self {
        Self { model }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(format!("{name} is empty"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(format!(
            "{name} row {i} has {} entries, row 0 has {cols}",
            rows[i].len()
        ));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl TryFrom<SystemSpecRaw> for SystemSpec {
    type Error = String;

    fn try_from(raw: SystemSpecRaw) -> Result<Self, Self::Error> {
        let model = SystemModel::new(
            raw.label,
            matrix("A", &raw.a)?,
            matrix("C", &raw.c)?,
            matrix("Q", &raw.q)?,
            matrix("R", &raw.r)?,
        )
        .map_err(|e| e.to_string())?;
        Ok(Self { model })
    }
}

impl From<SystemSpec> for SystemSpecRaw {
    fn from(spec: SystemSpec) -> Self {
        let m = spec.model;
        Self {
            label: m.label,
            a: rows(&m.a),
            c: rows(&m.c),
            q: rows(&m.q),
            r: rows(&m.r_meas),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub alpha: f64,
    pub gamma0: f64,
    pub step_exponent: f64,
    pub max_iter: usize,
    pub tol_violation: f64,
    pub tol_objective: f64,
    pub epsilon: f64,
    pub normalize_objective: bool,
    pub trace_stride: usize,
    /// Steps of the realized threshold schedule written to `schedule.csv`.
    pub schedule_horizon: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            alpha: d.alpha,
            gamma0: d.gamma0,
            step_exponent: d.step_exponent,
            max_iter: d.max_iter,
            tol_violation: d.tol_violation,
            tol_objective: d.tol_objective,
            epsilon: d.epsilon,
            normalize_objective: d.normalize_objective,
            trace_stride: 100,
            schedule_horizon: 1_000,
        }
    }
}

impl SolverSection {
    pub fn to_solver(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            alpha: self.alpha,
            gamma0: self.gamma0,
            step_exponent: self.step_exponent,
            max_iter: self.max_iter,
            tol_violation: self.tol_violation,
            tol_objective: self.tol_objective,
            epsilon: self.epsilon,
            normalize_objective: self.normalize_objective,
            trace_stride: self.trace_stride,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpSection {
    pub tau_max: usize,
    pub tol_span: f64,
    pub max_sweeps: usize,
    pub damping: f64,
    pub initial_state: Option<Vec<usize>>,
    /// Rollout length used for period detection and evaluation.
    pub horizon: usize,
    /// Also write the full value table and policy to `policy.txt`.
    pub dump_policy: bool,
}

impl Default for MdpSection {
    fn default() -> Self {
        let d = MdpConfig::default();
        Self {
            tau_max: d.tau_max,
            tol_span: d.tol_span,
            max_sweeps: d.max_sweeps,
            damping: d.damping,
            initial_state: d.initial_state,
            horizon: 10_000,
            dump_policy: false,
        }
    }
}

impl MdpSection {
    pub fn to_mdp(&self) -> MdpConfig {
        MdpConfig {
            tau_max: self.tau_max,
            tol_span: self.tol_span,
            max_sweeps: self.max_sweeps,
            damping: self.damping,
            initial_state: self.initial_state.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Candidate {
    #[default]
    Current,
    Next,
}

impl From<Candidate> for CandidateTime {
    fn from(c: Candidate) -> Self {
        match c {
            Candidate::Current => CandidateTime::Current,
            Candidate::Next => CandidateTime::Next,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedySection {
    pub horizon: usize,
    pub candidate: Candidate,
    pub initial_tau: Option<Vec<usize>>,
}

impl Default for GreedySection {
    fn default() -> Self {
        Self {
            horizon: 10_000,
            candidate: Candidate::Current,
            initial_tau: None,
        }
    }
}

fn positive_budget<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let b = f64::deserialize(d)?;
    if !(b > 0.0 && b.is_finite()) {
        return Err(serde::de::Error::custom(format!(
            "budget must be positive and finite, got {b}"
        )));
    }
    Ok(b)
}

fn fairness_values<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    let qs = Vec::<f64>::deserialize(d)?;
    if qs.is_empty() {
        return Err(serde::de::Error::custom("q_values must not be empty"));
    }
    if let Some(q) = qs.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
        return Err(serde::de::Error::custom(format!(
            "q must be finite and nonnegative, got {q}"
        )));
    }
    Ok(qs)
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub case: Case,
    #[serde(deserialize_with = "positive_budget")]
    pub budget: f64,
    #[serde(deserialize_with = "fairness_values")]
    pub q_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_q_values: Option<Vec<f64>>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub systems: Vec<SystemSpec>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub mdp: MdpSection,
    #[serde(default)]
    pub greedy: GreedySection,
}

impl ExperimentConfig {
    pub fn models(&self) -> Vec<SystemModel> {
        self.systems.iter().map(|s| s.model.clone()).collect()
    }

    /// `Z` for the activation case.
    pub fn activation_budget(&self) -> usize {
        self.budget as usize
    }

    pub fn methods(&self) -> Vec<Method> {
        self.method.expand(self.case)
    }

    pub fn is_table_q(&self, q: f64) -> bool {
        self.table_q_values
            .as_ref()
            .is_some_and(|t| t.contains(&q))
    }

    /// Cross-field checks; returns the offending top-level key and a message.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        let n = self.systems.len();
        if n == 0 {
            return Err(("systems", "at least one system is required".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(("name", format!("`{}` is not a usable directory name", self.name)));
        }
        if self.q_values.is_empty() {
            return Err(("q_values", "q_values must not be empty".into()));
        }
        if let Some(q) = self.q_values.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
            return Err(("q_values", format!("q must be finite and nonnegative, got {q}")));
        }
        if let Some(t) = &self.table_q_values {
            if let Some(q) = t.iter().find(|q| !self.q_values.contains(q)) {
                return Err(("table_q_values", format!("{q} is not in q_values")));
            }
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(("budget", format!("budget must be positive, got {}", self.budget)));
        }
        match self.case {
            Case::Activation => {
                if self.budget.fract() != 0.0 || self.budget > n as f64 {
                    return Err((
                        "budget",
                        format!(
                            "activation budget must be an integer in 1..={n}, got {}",
                            self.budget
                        ),
                    ));
                }
            }
            Case::Rate => {
                if matches!(self.method, Method::Mdp | Method::Greedy) {
                    return Err((
                        "method",
                        format!("method {} needs the activation case", self.method),
                    ));
                }
            }
        }
        self.solver
            .to_solver(self.seed)
            .validate()
            .map_err(|e| ("solver", e.to_string()))?;
        if self.solver.schedule_horizon == 0 {
            return Err(("solver", "schedule_horizon must be positive".into()));
        }
        if self.case == Case::Activation {
            let uses_mdp = self.methods().contains(&Method::Mdp);
            if uses_mdp {
                self.mdp
                    .to_mdp()
                    .validate(n, self.activation_budget())
                    .map_err(|e| ("mdp", e.to_string()))?;
            }
            if self.mdp.horizon == 0 {
                return Err(("mdp", "horizon must be positive".into()));
            }
            if self.greedy.horizon == 0 {
                return Err(("greedy", "horizon must be positive".into()));
            }
            if let Some(t) = &self.greedy.initial_tau {
                if t.len() != n {
                    return Err((
                        "greedy",
                        format!("initial_tau has {} entries, expected {n}", t.len()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Line of the first `"key":` in `text`, or 1.
fn key_line(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map_or(1, |i| i + 1)
}

/// Parses and validates `text`; `path` only labels error messages.
pub fn parse_config_str(text: &str, path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        let (mut line, mut column) = (inner.line(), inner.column());
        // Whole-system checks fail after the closing brace; point at the opening one.
        if field.starts_with("systems[") && field.ends_with(']') {
            if let Some(pos) = object_start(text, line, column) {
                (line, column) = pos;
            }
        }
        ConfigError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            field,
            message: strip_position(&inner.to_string()),
        }
    })?;
    cfg.check().map_err(|(key, message)| ConfigError::Invalid {
        path: path.to_path_buf(),
        line: key_line(text, key),
        message,
    })?;
    Ok(cfg)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = offset - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Position of the `{` matching the last `}` at or before `(line, column)`.
fn object_start(text: &str, line: usize, column: usize) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    let mut i = (line_start + column).min(bytes.len());
    if i > 0 && bytes[i - 1] == b']' {
        i -= 1;
    }
    while i > 0 && (bytes[i - 1].is_ascii_whitespace() || bytes[i - 1] == b',') {
        i -= 1;
    }
    if i == 0 || bytes[i - 1] != b'}' {
        return None;
    }
    let mut depth = 0usize;
    let mut in_string = false;
    while i > 0 {
        i -= 1;
        match bytes[i] {
            b'"' if i == 0 || bytes[i - 1] != b'\\' => in_string = !in_string,
            b'}' if !in_string => depth += 1,
            b'{' if !in_string => {
                depth -= 1;
                if depth == 0 {
                    return Some(line_col(text, i));
                }
            }
            _ => {}
        }
    }
    None
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, path)
}
