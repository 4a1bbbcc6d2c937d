//! Closed-loop stability certificates for plant/controller programs.
//!
//! The crate checks a candidate quadratic Lyapunov invariant at two levels:
//! the closed-loop state-space model (an S-procedure matrix inequality) and
//! the code of two communicating processes (forward propagation of
//! ellipsoidal sets through every statement). A concrete simulator executes
//! the same programs to cross-check the annotations.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod absstab;
pub mod analyzer;
pub mod cli;
pub mod ir;
pub mod quadsets;
pub mod simulator;
pub mod symmat;
#[cfg(test)]
mod testdata;

/// Numerical tolerances shared by the checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Slack allowed on the smallest eigenvalue in semidefiniteness tests.
    pub psd: f64,
    /// Slack allowed in set containment tests.
    pub contain: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            psd: 1e-9,
            contain: 1e-8,
        }
    }
}
