//! Numerical thresholds shared across the crate.
//!
//! Every threshold used by a numerical routine lives here so that a run can
//! override any of them in one place.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Max-norm bound on `M - M^dag` accepted when constructing a Hermitian operator.
    pub hermitian: f64,
    /// Max-norm bound on `U^dag U - 1` accepted for a unitary.
    pub unitary: f64,
    /// Eigenvalues closer than this (scaled by `max(1, |e|_max)`) are treated as degenerate.
    pub degeneracy: f64,
    /// Cap on cyclic Jacobi sweeps.
    pub max_sweeps: usize,
    /// Largest admissible `|Re(scale) * e_k|` in a matrix exponential.
    pub exponent_limit: f64,
    /// Probabilities below this are exact zeros in entropies and logarithms.
    pub probability_floor: f64,
    /// Relative threshold on `|<j,nu|V|i,mu>| / |V|_max` below which epsilon is undefined.
    pub coupling_element: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermitian: 1e-12,
            unitary: 1e-10,
            degeneracy: 1e-10,
            max_sweeps: 100,
            exponent_limit: 700.0,
            probability_floor: 1e-15,
            coupling_element: 1e-12,
        }
    }
}
