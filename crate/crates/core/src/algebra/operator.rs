use num_complex::Complex64;

use super::matrix::{tensor, ComplexMatrix};
use crate::error::{Error, Result};
use crate::tolerances::Tolerances;

/// A labelled observable, Hermitian to within [`Tolerances::hermitian`].
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
    label: String,
}

impl HermitianOperator {
    pub fn new(matrix: ComplexMatrix, label: impl Into<String>) -> Result<Self> {
        Self::with_tolerance(matrix, label, Tolerances::default().hermitian)
    }

    pub fn with_tolerance(matrix: ComplexMatrix, label: impl Into<String>, tol: f64) -> Result<Self> {
        let label = label.into();
        let deviation = matrix.hermiticity_defect();
        if deviation > tol {
            return Err(Error::NotHermitian { label, deviation });
        }
        Ok(Self { matrix, label })
    }

    pub fn zero(dim: usize, label: impl Into<String>) -> Self {
        Self { matrix: ComplexMatrix::zeros(dim), label: label.into() }
    }

    pub fn identity(dim: usize, label: impl Into<String>) -> Self {
        Self { matrix: ComplexMatrix::identity(dim), label: label.into() }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { matrix: self.matrix.scale_real(s), label: self.label.clone() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            matrix: self.matrix.checked_add(&other.matrix)?,
            label: format!("{}+{}", self.label, other.label),
        })
    }

    /// Real linear combination `sum_k c_k A_k`.
    pub fn linear_combination(
        coefficients: &[f64],
        operators: &[HermitianOperator],
        label: impl Into<String>,
    ) -> Result<Self> {
        if coefficients.len() != operators.len() {
            return Err(Error::DimensionMismatch {
                expected: coefficients.len(),
                found: operators.len(),
            });
        }
        let first = operators
            .first()
            .ok_or_else(|| Error::Invalid("empty operator list".into()))?;
        let mut acc = ComplexMatrix::zeros(first.dim());
        for (&c, op) in coefficients.iter().zip(operators) {
            acc = acc.checked_add(&op.matrix.scale_real(c))?;
        }
        Ok(Self { matrix: acc, label: label.into() })
    }

    /// `A (x) 1_d` on a joint space with this operator as the first factor.
    pub fn embed_left(&self, right_dim: usize) -> Self {
        Self {
            matrix: tensor(&self.matrix, &ComplexMatrix::identity(right_dim)),
            label: format!("{}(x)1", self.label),
        }
    }

    /// `1_d (x) A` on a joint space with this operator as the second factor.
    pub fn embed_right(&self, left_dim: usize) -> Self {
        Self {
            matrix: tensor(&ComplexMatrix::identity(left_dim), &self.matrix),
            label: format!("1(x){}", self.label),
        }
    }

    pub fn expectation(&self, v: &[Complex64]) -> f64 {
        self.matrix.expectation(v)
    }
}

/// `AB - BA`; anti-Hermitian for Hermitian inputs.
pub fn commutator(a: &HermitianOperator, b: &HermitianOperator) -> Result<ComplexMatrix> {
    let ab = a.matrix().matmul(b.matrix())?;
    let ba = b.matrix().matmul(a.matrix())?;
    ab.checked_sub(&ba)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryOperator {
    matrix: ComplexMatrix,
}

impl UnitaryOperator {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(matrix, Tolerances::default().unitary)
    }

    pub fn with_tolerance(matrix: ComplexMatrix, tol: f64) -> Result<Self> {
        let deviation = unitarity_defect(&matrix);
        if deviation > tol {
            return Err(Error::NotUnitary { deviation });
        }
        Ok(Self { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: ComplexMatrix::identity(dim) }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn adjoint(&self) -> Self {
        Self { matrix: self.matrix.adjoint() }
    }

    pub fn compose(&self, later: &Self) -> Result<Self> {
        Ok(Self { matrix: later.matrix.matmul(&self.matrix)? })
    }
}

pub fn unitarity_defect(m: &ComplexMatrix) -> f64 {
    let udu = &m.adjoint() * m;
    udu.max_abs_diff(&ComplexMatrix::identity(m.dim()))
}
