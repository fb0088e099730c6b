//! The five two-state benchmark plants used in the numerical study.
//!
//! `case1_systems` is the rate-constrained set (`C = R = I₂` for all sensors);
//! `case2_systems` changes sensor 3's dynamics and noise, sensor 5's process
//! noise, and the measurement noise of sensors 3 and 5.

use nalgebra::DMatrix;

use crate::estimation::SystemModel;

fn m2(rows: [[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
}

fn diag(a: f64, b: f64) -> DMatrix<f64> {
    m2([[a, 0.0], [0.0, b]])
}

fn build(a: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>, idx: usize) -> SystemModel {
    SystemModel::new(format!("sensor{idx}"), a, DMatrix::identity(2, 2), q, r)
        .expect("benchmark system is well formed")
}

pub fn case1_systems() -> Vec<SystemModel> {
    let a = [
        m2([[1.2, 0.0], [0.0, 0.0]]),
        m2([[1.1, 1.0], [0.0, 1.0]]),
        m2([[1.2, 1.0], [0.0, 0.8]]),
        m2([[0.8, 0.6], [0.0, 0.9]]),
        m2([[0.3, 1.0], [0.0, 0.1]]),
    ];
    let q = [
        diag(4.0, 1.0),
        diag(1.0, 4.0),
        diag(1.0, 4.0),
        diag(16.0, 1.0),
        diag(0.3, 1.2),
    ];
    a.into_iter()
        .zip(q)
        .enumerate()
        .map(|(i, (a, q))| build(a, q, DMatrix::identity(2, 2), i + 1))
        .collect()
}

pub fn case2_systems() -> Vec<SystemModel> {
    let mut systems = case1_systems();
    systems[2] = build(
        m2([[1.1, 0.0], [0.0, 0.0]]),
        diag(1.0, 1.0),
        DMatrix::identity(2, 2) * 10.0,
        3,
    );
    systems[4] = build(
        systems[4].a.clone(),
        diag(2.0, 8.0),
        DMatrix::identity(2, 2) * 5.0,
        5,
    );
    systems
}

/// Rate budget `R` and activation budget `Z` used with both sets.
pub const BENCHMARK_BUDGET: usize = 2;

/// Fairness values reported in the comparison table.
pub const TABLE_Q_VALUES: [f64; 4] = [0.0, 0.5, 2.0, 20.0];
