//! Linear system model, steady-state Kalman covariance and the open-loop
//! covariance traces every scheduler is built on.
//!
//! With `h(X) = A X Aᵀ + Q` (prediction) and
//! `g̃(X) = X − X Cᵀ (C X Cᵀ + R)⁻¹ C X` (measurement update), the local filter
//! settles at `P̄ = g̃(h(P̄))`. A sensor that has been silent for `τ` steps leaves
//! the remote estimator with covariance `h^(τ)(P̄)`.

use std::sync::Mutex;

use nalgebra::DMatrix;
use thiserror::Error;

/// Tolerance on eigenvalue sign checks for user-supplied covariances.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Default Frobenius-norm residual for the steady-state fixed point.
pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-12;
/// Default iteration budget for the steady-state fixed point.
pub const DEFAULT_FIXED_POINT_MAX_ITER: usize = 1_000_000;
/// Default cap on the number of memoized open-loop traces.
pub const DEFAULT_TRACE_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{0} is not symmetric")]
    NotSymmetric(&'static str),

    #[error("{name} is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { name: &'static str, min_eigenvalue: f64 },

    #[error("{name} is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { name: &'static str, min_eigenvalue: f64 },

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("innovation covariance C X Cᵀ + R is singular")]
    SingularInnovation,

    #[error("steady-state iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("open-loop trace at holding time {index} is not finite")]
    NonFiniteTrace { index: usize },

    #[error("open-loop trace index {index} exceeds the cache cap of {cap}")]
    TraceCapExceeded { index: usize, cap: usize },

    #[error("fairness parameter q must be finite and nonnegative, got {0}")]
    InvalidFairness(f64),

    #[error("fair cost argument must be finite and nonnegative, got {0}")]
    NegativeCost(f64),

    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),
}

pub type Result<T> = std::result::Result<T, EstimationError>;

/// One plant/sensor pair: `x⁺ = A x + w`, `y = C x + v`, `w ~ N(0, Q)`, `v ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r_meas: DMatrix<f64>,
    pub label: String,
}

impl SystemModel {
    /// Builds a model after checking shapes, finiteness, `Q ⪰ 0` and `R ≻ 0`.
    pub fn new(
        label: impl Into<String>,
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r_meas: DMatrix<f64>,
    ) -> Result<Self> {
        let model = Self {
            a,
            c,
            q,
            r_meas,
            label: label.into(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Scalar convenience constructor (`n = m = 1`).
    pub fn scalar(label: impl Into<String>, a: f64, c: f64, q: f64, r_meas: f64) -> Result<Self> {
        let m = |v| DMatrix::from_element(1, 1, v);
        Self::new(label, m(a), m(c), m(q), m(r_meas))
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if !self.a.is_square() {
            return Err(dim("A", format!("{n}x{n}"), shape(&self.a)));
        }
        if self.c.ncols() != n || self.c.nrows() == 0 {
            return Err(dim("C", format!("mx{n}"), shape(&self.c)));
        }
        let m = self.c.nrows();
        if self.q.shape() != (n, n) {
            return Err(dim("Q", format!("{n}x{n}"), shape(&self.q)));
        }
        if self.r_meas.shape() != (m, m) {
            return Err(dim("R", format!("{m}x{m}"), shape(&self.r_meas)));
        }
        for (name, mat) in [("A", &self.a), ("C", &self.c), ("Q", &self.q), ("R", &self.r_meas)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(EstimationError::NonFinite(name));
            }
        }
        check_symmetric("Q", &self.q)?;
        check_symmetric("R", &self.r_meas)?;
        let q_min = min_eigenvalue(&self.q);
        if q_min < -PSD_TOLERANCE {
            return Err(EstimationError::NotPositiveSemidefinite {
                name: "Q",
                min_eigenvalue: q_min,
            });
        }
        let r_min = min_eigenvalue(&self.r_meas);
        if r_min <= 0.0 {
            return Err(EstimationError::NotPositiveDefinite {
                name: "R",
                min_eigenvalue: r_min,
            });
        }
        Ok(())
    }
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn dim(context: &'static str, expected: String, actual: String) -> EstimationError {
    EstimationError::DimensionMismatch {
        context,
        expected,
        actual,
    }
}

fn check_symmetric(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(EstimationError::NotSymmetric(name));
    }
    Ok(())
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m.clone())
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn check_square_input(x: &DMatrix<f64>, sys: &SystemModel, context: &'static str) -> Result<()> {
    let n = sys.state_dim();
    if x.shape() != (n, n) {
        return Err(dim(context, format!("{n}x{n}"), shape(x)));
    }
    Ok(())
}

/// `h(X) = A X Aᵀ + Q`, symmetrized.
pub fn lyapunov_step(x: &DMatrix<f64>, sys: &SystemModel) -> Result<DMatrix<f64>> {
    check_square_input(x, sys, "lyapunov_step")?;
    Ok(predict(x, sys))
}

fn predict(x: &DMatrix<f64>, sys: &SystemModel) -> DMatrix<f64> {
    symmetrize(&sys.a * x * sys.a.transpose() + &sys.q)
}

/// `g̃(X) = X − X Cᵀ (C X Cᵀ + R)⁻¹ C X`, symmetrized.
pub fn measurement_update(x: &DMatrix<f64>, sys: &SystemModel) -> Result<DMatrix<f64>> {
    check_square_input(x, sys, "measurement_update")?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::NonFinite("X"));
    }
    update(x, sys)
}

fn update(x: &DMatrix<f64>, sys: &SystemModel) -> Result<DMatrix<f64>> {
    let xct = x * sys.c.transpose();
    let innovation = &sys.c * &xct + &sys.r_meas;
    let inv = symmetrize(innovation)
        .cholesky()
        .ok_or(EstimationError::SingularInnovation)?
        .inverse();
    Ok(symmetrize(x - &xct * inv * xct.transpose()))
}

/// `q`-fairness exponent; `q = 0` is pure efficiency.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FairnessParam(f64);

impl FairnessParam {
    pub fn new(q: f64) -> Result<Self> {
        if !q.is_finite() || q < 0.0 {
            return Err(EstimationError::InvalidFairness(q));
        }
        Ok(Self(q))
    }

    pub fn efficiency() -> Self {
        Self(0.0)
    }

    pub fn q(self) -> f64 {
        self.0
    }

    /// `f_q(x)` without argument checks; callers guarantee `x ≥ 0`.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        if self.0 == 0.0 {
            x
        } else {
            x.powf(1.0 + self.0) / (1.0 + self.0)
        }
    }

    /// `f_q'(x) = x^q`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        if self.0 == 0.0 {
            1.0
        } else {
            x.powf(self.0)
        }
    }
}

/// `f_q(x) = x^(1+q) / (1+q)`.
pub fn fair_cost(x: f64, fp: FairnessParam) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(EstimationError::NegativeCost(x));
    }
    Ok(fp.apply(x))
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    assert!(a.is_square(), "spectral radius of a non-square matrix");
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[derive(Debug)]
struct TraceState {
    traces: Vec<f64>,
    /// `prefix[j] = Σ_{i<j} traces[i]`, one longer than `traces`.
    prefix: Vec<f64>,
    /// `h^(traces.len() - 1)(P̄)`, the last iterate the traces were taken from.
    frontier: DMatrix<f64>,
}

/// Steady-state covariance plus the lazily extended sequence `Tr h^(j)(P̄)`.
///
/// Extension happens under a mutex, so shared references can be handed to
/// parallel readers. The sequence is capped; asking past the cap is an error.
#[derive(Debug)]
pub struct SteadyStateCache {
    p_bar: DMatrix<f64>,
    rho_a: f64,
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    cap: usize,
    iterations: usize,
    residual: f64,
    state: Mutex<TraceState>,
}

impl Clone for SteadyStateCache {
    fn clone(&self) -> Self {
        let state = self.state.lock().expect("trace cache poisoned");
        Self {
            p_bar: self.p_bar.clone(),
            rho_a: self.rho_a,
            a: self.a.clone(),
            q: self.q.clone(),
            cap: self.cap,
            iterations: self.iterations,
            residual: self.residual,
            state: Mutex::new(TraceState {
                traces: state.traces.clone(),
                prefix: state.prefix.clone(),
                frontier: state.frontier.clone(),
            }),
        }
    }
}

impl SteadyStateCache {
    pub fn p_bar(&self) -> &DMatrix<f64> {
        &self.p_bar
    }

    pub fn rho_a(&self) -> f64 {
        self.rho_a
    }

    pub fn is_stable(&self) -> bool {
        self.rho_a < 1.0
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap.max(1);
        self
    }

    /// Fixed-point iterations used to reach `P̄`.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Final `‖g̃(h(P̄)) − P̄‖_F`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Number of traces memoized so far.
    pub fn memoized_len(&self) -> usize {
        self.state.lock().expect("trace cache poisoned").traces.len()
    }

    /// `Tr h^(j)(P̄)`.
    pub fn trace(&self, j: usize) -> Result<f64> {
        if j >= self.cap {
            return Err(EstimationError::TraceCapExceeded {
                index: j,
                cap: self.cap,
            });
        }
        let mut state = self.state.lock().expect("trace cache poisoned");
        self.extend_to(&mut state, j + 1)?;
        Ok(state.traces[j])
    }

    /// `[Tr h^(0)(P̄), …, Tr h^(len-1)(P̄)]`.
    pub fn traces(&self, len: usize) -> Result<Vec<f64>> {
        if len > self.cap {
            return Err(EstimationError::TraceCapExceeded {
                index: len - 1,
                cap: self.cap,
            });
        }
        let mut state = self.state.lock().expect("trace cache poisoned");
        self.extend_to(&mut state, len)?;
        Ok(state.traces[..len].to_vec())
    }

    /// `(Tr h^(j)(P̄), Σ_{i<j} Tr h^(i)(P̄))` without copying the sequence.
    pub fn trace_and_prefix(&self, j: usize) -> Result<(f64, f64)> {
        if j >= self.cap {
            return Err(EstimationError::TraceCapExceeded {
                index: j,
                cap: self.cap,
            });
        }
        let mut state = self.state.lock().expect("trace cache poisoned");
        self.extend_to(&mut state, j + 1)?;
        Ok((state.traces[j], state.prefix[j]))
    }

    fn extend_to(&self, state: &mut TraceState, len: usize) -> Result<()> {
        while state.traces.len() < len {
            let next = symmetrize(&self.a * &state.frontier * self.a.transpose() + &self.q);
            let tr = next.trace();
            if !tr.is_finite() {
                return Err(EstimationError::NonFiniteTrace {
                    index: state.traces.len(),
                });
            }
            let total = state.prefix.last().copied().unwrap_or(0.0) + tr;
            state.traces.push(tr);
            state.prefix.push(total);
            state.frontier = next;
        }
        Ok(())
    }
}

/// Iterates `X ← g̃(h(X))` from `X₀ = Q` until the Frobenius step is within `tol`.
pub fn steady_state(sys: &SystemModel, tol: f64, max_iter: usize) -> Result<SteadyStateCache> {
    if !(tol > 0.0) {
        return Err(EstimationError::InvalidTolerance(tol));
    }
    sys.validate()?;
    let mut x = sys.q.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = update(&predict(&x, sys), sys)?;
        residual = (&next - &x).norm();
        x = next;
        iterations += 1;
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            break;
        }
    }
    if !(residual <= tol) {
        return Err(EstimationError::NoConvergence {
            iterations,
            residual,
        });
    }
    // Residual of the accepted point itself, not of the previous step.
    let residual = (update(&predict(&x, sys), sys)? - &x).norm();
    let p_bar = x;
    let trace0 = p_bar.trace();
    Ok(SteadyStateCache {
        rho_a: spectral_radius(&sys.a),
        a: sys.a.clone(),
        q: sys.q.clone(),
        cap: DEFAULT_TRACE_CAP,
        iterations,
        residual,
        state: Mutex::new(TraceState {
            traces: vec![trace0],
            prefix: vec![0.0, trace0],
            frontier: p_bar.clone(),
        }),
        p_bar,
    })
}

impl SystemModel {
    /// [`steady_state`] with the default tolerance and iteration budget.
    pub fn steady_state(&self) -> Result<SteadyStateCache> {
        steady_state(self, DEFAULT_FIXED_POINT_TOL, DEFAULT_FIXED_POINT_MAX_ITER)
    }
}

/// `Tr h^(j)(P̄)` for the model the cache was built from.
pub fn open_loop_trace(cache: &SteadyStateCache, sys: &SystemModel, j: usize) -> Result<f64> {
    if cache.a != sys.a || cache.q != sys.q {
        return Err(dim(
            "open_loop_trace",
            "cache built from this model".into(),
            format!("model {}", sys.label),
        ));
    }
    cache.trace(j)
}
