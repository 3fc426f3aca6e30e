//! Dense complex linear algebra for operators of dimension up to ~64.

mod eigen;
mod matrix;
mod operator;

pub use eigen::{
    expm_from_spectrum, expm_hermitian, expm_hermitian_with, spectral_decompose, spectral_decompose_with,
    unitary_exp, SpectralDecomposition,
};
pub use matrix::{tensor, tensor_vec, ComplexMatrix};
pub use operator::{commutator, unitarity_defect, HermitianOperator, UnitaryOperator};

use num_complex::Complex64;

/// Single-site Pauli matrix for `I`, `X`, `Y` or `Z`.
///
/// Panics on any other letter.
pub fn pauli_matrix(letter: char) -> ComplexMatrix {
    let z = Complex64::new(0.0, 0.0);
    let o = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    let data = match letter {
        'I' => vec![o, z, z, o],
        'X' => vec![z, o, o, z],
        'Y' => vec![z, -i, i, z],
        'Z' => vec![o, z, z, -o],
        other => panic!("not a Pauli letter: {other:?}"),
    };
    ComplexMatrix::from_row_major(2, data).unwrap()
}
