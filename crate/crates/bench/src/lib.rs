//! Fixtures shared by the criterion benches.

use nonabelian_core::heisenberg::{build_exchange_model, build_driven_model};
use nonabelian_core::{ComplexMatrix, HeisenbergParams, HermitianOperator, JointSetup};
use num_complex::Complex64;

/// Deterministic dense Hermitian matrix with a non-degenerate spectrum.
pub fn hermitian(dim: usize) -> HermitianOperator {
    let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            let x = (r * dim + c) as f64;
            data[r * dim + c] = if r == c {
                Complex64::new(r as f64 + (0.3 * x).sin(), 0.0)
            } else if r < c {
                Complex64::new((0.7 * x).cos(), (1.1 * x).sin()) / dim as f64
            } else {
                let y = (c * dim + r) as f64;
                Complex64::new((0.7 * y).cos(), -(1.1 * y).sin()) / dim as f64
            };
        }
    }
    HermitianOperator::new(ComplexMatrix::from_row_major(dim, data).unwrap(), "bench").unwrap()
}

pub fn exchange_setup(theta: f64) -> JointSetup {
    build_exchange_model(&HeisenbergParams::default().at_theta(theta)).unwrap()
}

pub fn driven_setup(theta: f64) -> JointSetup {
    build_driven_model(&HeisenbergParams::driven().at_theta(theta)).unwrap()
}

pub const EXPRESSIONS: [&str; 3] = ["XX + YY + ZZ", "0.5*ZI - 0.25*0.8*IX + 1e-3*YY", "XIZY + 2*ZZII - IXXI"];
