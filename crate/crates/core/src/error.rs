use thiserror::Error;

use crate::pauli::ParseError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix must have dim >= 1 and dim^2 entries (dim {dim}, {len} entries)")]
    BadShape { dim: usize, len: usize },

    #[error("operator `{label}` is not Hermitian (max |M - M^dag| = {deviation:.3e})")]
    NotHermitian { label: String, deviation: f64 },

    #[error("matrix is not unitary (max |U^dag U - 1| = {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:.3e})")]
    NonConvergence { sweeps: usize, off_norm: f64 },

    #[error("exponent out of range: |{value:.3e}| exceeds {limit}")]
    Range { value: f64, limit: f64 },

    #[error("reference state is rank deficient: eigenvalue {value:.3e} at index {index}")]
    Rank { index: usize, value: f64 },

    #[error("propagator did not converge at {slices} slices (last error estimate {last_error:.3e})")]
    PropagatorNonConvergence { slices: usize, last_error: f64 },

    #[error("time {t} outside protocol window [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("{n_sites} sites exceed the cap of {max_sites} (dimension {dim})")]
    DimensionCap { n_sites: usize, max_sites: usize, dim: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("driven setup: the exchange estimator requires time-independent charges")]
    DrivenSetup,
}
