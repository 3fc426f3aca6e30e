pub mod algebra;
pub mod dynamics;
pub mod error;
pub mod flucts;
pub mod format;
pub mod gge;
pub mod heisenberg;
pub mod pauli;
pub mod sweep;
pub mod tolerances;
pub mod trajectories;

#[cfg(test)]
mod testutil;

pub use algebra::{
    commutator, spectral_decompose, tensor, ComplexMatrix, HermitianOperator, SpectralDecomposition,
    UnitaryOperator,
};
pub use dynamics::{propagate, DrivenOperator, LinearRamp, PropagatorConfig, Protocol, Schedule};
pub use error::{Error, Result};
pub use flucts::{ft_report, DiagnosticFlags, FTReport, Mode};
pub use gge::{build_gibbs_state, ChargeSet, GibbsState, ProbabilityVector};
pub use pauli::{expr_to_matrix, parse_pauli_expr, ParseError, PauliExpr};
pub use heisenberg::{build_model, HeisenbergParams};
pub use sweep::{run_sweep_with, SweepRow, SweepTable};
pub use tolerances::Tolerances;
pub use trajectories::{
    enumerate_ensemble, enumerate_ensemble_with, DeltaABasis, EnsembleOptions, EpsilonFormula, JointSetup,
    PathEnsemble, ReverseIndex, Trajectory, TrajectoryRecord,
};
