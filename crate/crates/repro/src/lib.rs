//! Randomized invariant suites shared by the property tests and the
//! acceptance run.

pub mod properties;
