//! Hermitian eigendecomposition by cyclic complex Jacobi rotations.
//!
//! Each rotation removes the phase of the pivot element and then applies a
//! real Jacobi rotation, so the whole update is a 2x2 unitary acting on rows
//! and columns `p, q`. Sweeps run over pairs in fixed row-major order.
//!
//! Output is canonicalised so repeated calls on identical input return
//! identical bases: eigenvalues ascending; degenerate groups re-spanned by
//! column-pivoted Gram-Schmidt on the group projector applied to the
//! canonical basis; every vector phased so its leading largest component is
//! real and positive.

use num_complex::Complex64;

use super::matrix::ComplexMatrix;
use super::operator::{HermitianOperator, UnitaryOperator};
use crate::error::{Error, Result};
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<Vec<Complex64>>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &[Vec<Complex64>] {
        &self.eigenvectors
    }

    pub fn eigenvector(&self, k: usize) -> &[Complex64] {
        &self.eigenvectors[k]
    }

    pub fn projector(&self, k: usize) -> ComplexMatrix {
        ComplexMatrix::projector(&self.eigenvectors[k])
    }

    pub fn projectors(&self) -> Vec<ComplexMatrix> {
        (0..self.dim()).map(|k| self.projector(k)).collect()
    }

    /// `sum_k f(e_k) |k><k|`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> Complex64) -> ComplexMatrix {
        let weights: Vec<Complex64> = self.eigenvalues.iter().map(|&e| f(e)).collect();
        ComplexMatrix::from_weighted_projectors(&self.eigenvectors, &weights)
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.map_spectrum(|e| Complex64::new(e, 0.0))
    }

    /// Columns are the eigenvectors.
    pub fn basis_matrix(&self) -> ComplexMatrix {
        let n = self.dim();
        let mut m = ComplexMatrix::zeros(n);
        for (c, v) in self.eigenvectors.iter().enumerate() {
            for r in 0..n {
                m[(r, c)] = v[r];
            }
        }
        m
    }

    /// Replace the basis, keeping eigenvalues. Used by degeneracy diagnostics.
    pub(crate) fn with_eigenvectors(&self, eigenvectors: Vec<Vec<Complex64>>) -> Self {
        Self { eigenvalues: self.eigenvalues.clone(), eigenvectors }
    }

    /// Index ranges of eigenvalues equal within `tol * max(1, |e|_max)`.
    pub fn degenerate_groups(&self, tol: f64) -> Vec<std::ops::Range<usize>> {
        group_ranges(&self.eigenvalues, tol)
    }
}

pub fn spectral_decompose(a: &HermitianOperator) -> Result<SpectralDecomposition> {
    spectral_decompose_with(a, &Tolerances::default())
}

pub fn spectral_decompose_with(a: &HermitianOperator, tol: &Tolerances) -> Result<SpectralDecomposition> {
    let n = a.dim();
    let (values, vectors) = jacobi(a.matrix(), tol.max_sweeps)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| values[x].total_cmp(&values[y]).then(x.cmp(&y)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| values[k]).collect();
    let mut eigenvectors: Vec<Vec<Complex64>> = order
        .iter()
        .map(|&k| (0..n).map(|r| vectors[r * n + k]).collect())
        .collect();

    for group in group_ranges(&eigenvalues, tol.degeneracy) {
        if group.len() > 1 {
            let basis = canonical_subspace_basis(&eigenvectors[group.clone()], n);
            for (slot, v) in group.zip(basis) {
                eigenvectors[slot] = v;
            }
        }
    }
    for v in &mut eigenvectors {
        fix_phase(v);
    }
    Ok(SpectralDecomposition { eigenvalues, eigenvectors })
}

/// `exp(scale * A)` through the spectral decomposition of `A`.
pub fn expm_hermitian(a: &HermitianOperator, scale: Complex64) -> Result<ComplexMatrix> {
    expm_hermitian_with(a, scale, &Tolerances::default())
}

pub fn expm_hermitian_with(a: &HermitianOperator, scale: Complex64, tol: &Tolerances) -> Result<ComplexMatrix> {
    let sd = spectral_decompose_with(a, tol)?;
    expm_from_spectrum(&sd, scale, tol.exponent_limit)
}

pub fn expm_from_spectrum(sd: &SpectralDecomposition, scale: Complex64, limit: f64) -> Result<ComplexMatrix> {
    for &e in sd.eigenvalues() {
        let x = scale.re * e;
        if x.abs() > limit {
            return Err(Error::Range { value: x, limit });
        }
    }
    Ok(sd.map_spectrum(|e| (scale * e).exp()))
}

/// `exp(-i t A)` as a unitary.
pub fn unitary_exp(a: &HermitianOperator, t: f64, tol: &Tolerances) -> Result<UnitaryOperator> {
    let m = expm_hermitian_with(a, Complex64::new(0.0, -t), tol)?;
    UnitaryOperator::with_tolerance(m, tol.unitary)
}

/// Returns (eigenvalues, row-major eigenvector matrix with eigenvectors as columns).
fn jacobi(m: &ComplexMatrix, max_sweeps: usize) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let n = m.dim();
    let mut a: Vec<Complex64> = m.as_slice().to_vec();
    // Symmetrise so rounding in the input cannot bias the rotations.
    for r in 0..n {
        a[r * n + r] = Complex64::new(a[r * n + r].re, 0.0);
        for c in r + 1..n {
            let avg = (a[r * n + c] + a[c * n + r].conj()) * 0.5;
            a[r * n + c] = avg;
            a[c * n + r] = avg.conj();
        }
    }
    let mut v = vec![Complex64::new(0.0, 0.0); n * n];
    for k in 0..n {
        v[k * n + k] = Complex64::new(1.0, 0.0);
    }
    let frob = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let off_norm = |a: &[Complex64]| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    s += a[r * n + c].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let target = f64::EPSILON * frob;
    let mut sweeps = 0;
    loop {
        let off = off_norm(&a);
        if off <= target || n == 1 {
            break;
        }
        if sweeps == max_sweeps {
            return Err(Error::NonConvergence { sweeps, off_norm: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, &mut v, n, p, q);
            }
        }
    }
    let values = (0..n).map(|k| a[k * n + k].re).collect();
    Ok((values, v))
}

fn rotate(a: &mut [Complex64], v: &mut [Complex64], n: usize, p: usize, q: usize) {
    let b = a[p * n + q];
    let abs_b = b.norm();
    if abs_b < 1e-300 {
        return;
    }
    let phase = b / abs_b;
    let app = a[p * n + p].re;
    let aqq = a[q * n + q].re;
    let theta = (aqq - app) / (2.0 * abs_b);
    let t = if theta == 0.0 {
        1.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    // W = [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
    let ph_conj = phase.conj();
    let w10 = -ph_conj * s;
    let w11 = ph_conj * c;

    for k in 0..n {
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = akp * c + akq * w10;
        a[k * n + q] = akp * s + akq * w11;
    }
    for k in 0..n {
        let apk = a[p * n + k];
        let aqk = a[q * n + k];
        a[p * n + k] = apk * c + aqk * w10.conj();
        a[q * n + k] = apk * s + aqk * w11.conj();
    }
    a[p * n + q] = Complex64::new(0.0, 0.0);
    a[q * n + p] = Complex64::new(0.0, 0.0);
    a[p * n + p] = Complex64::new(app - t * abs_b, 0.0);
    a[q * n + q] = Complex64::new(aqq + t * abs_b, 0.0);

    for k in 0..n {
        let vkp = v[k * n + p];
        let vkq = v[k * n + q];
        v[k * n + p] = vkp * c + vkq * w10;
        v[k * n + q] = vkp * s + vkq * w11;
    }
}

fn group_ranges(sorted: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let scale = sorted.iter().fold(1.0_f64, |m, e| m.max(e.abs()));
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=sorted.len() {
        if k == sorted.len() || sorted[k] - sorted[start] > tol * scale {
            groups.push(start..k);
            start = k;
        }
    }
    groups
}

/// Deterministic orthonormal basis of span(vectors): Gram-Schmidt on the
/// projected canonical basis, always taking the column with largest residual.
fn canonical_subspace_basis(vectors: &[Vec<Complex64>], n: usize) -> Vec<Vec<Complex64>> {
    let projector = ComplexMatrix::from_weighted_projectors(vectors, &vec![Complex64::new(1.0, 0.0); vectors.len()]);
    let mut candidates: Vec<Vec<Complex64>> = (0..n).map(|c| (0..n).map(|r| projector[(r, c)]).collect()).collect();
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(vectors.len());
    let mut used = vec![false; n];
    while basis.len() < vectors.len() {
        let mut best = None;
        let mut best_norm = -1.0;
        for (c, cand) in candidates.iter().enumerate() {
            if used[c] {
                continue;
            }
            let norm = norm2(cand);
            if norm > best_norm * (1.0 + 1e-12) {
                best = Some(c);
                best_norm = norm;
            }
        }
        let c = best.expect("subspace rank exceeds ambient dimension");
        used[c] = true;
        let scale = 1.0 / best_norm;
        let u: Vec<Complex64> = candidates[c].iter().map(|x| x * scale).collect();
        for (k, cand) in candidates.iter_mut().enumerate() {
            if used[k] {
                continue;
            }
            let overlap: Complex64 = u.iter().zip(cand.iter()).map(|(a, b)| a.conj() * b).sum();
            for (x, ui) in cand.iter_mut().zip(&u) {
                *x -= overlap * ui;
            }
        }
        basis.push(u);
    }
    basis
}

fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn fix_phase(v: &mut [Complex64]) {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.norm()));
    if max == 0.0 {
        return;
    }
    let lead = v.iter().position(|x| x.norm() >= max * (1.0 - 1e-9)).unwrap();
    let rot = v[lead].conj() / v[lead].norm();
    for x in v.iter_mut() {
        *x *= rot;
    }
    v[lead] = Complex64::new(v[lead].re, 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::pauli_matrix;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn herm(m: ComplexMatrix) -> HermitianOperator {
        HermitianOperator::new(m, "A").unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn sigma_z_spectrum_and_vectors() {
        let sd = spectral_decompose(&herm(pauli_matrix('Z'))).unwrap();
        assert_eq!(sd.eigenvalues(), &[-1.0, 1.0]);
        assert_eq!(sd.eigenvector(0), &[c(0.0), c(1.0)]);
        assert_eq!(sd.eigenvector(1), &[c(1.0), c(0.0)]);
    }

    #[test]
    fn rotated_pauli_has_half_omega_eigenvalues() {
        let theta = PI / 2.0;
        let m = &pauli_matrix('Z').scale_real(theta.cos() / 2.0) + &pauli_matrix('X').scale_real(theta.sin() / 2.0);
        let sd = spectral_decompose(&herm(m)).unwrap();
        assert_abs_diff_eq!(sd.eigenvalues()[0], -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(sd.eigenvalues()[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_identity_gets_canonical_basis() {
        let sd = spectral_decompose(&herm(ComplexMatrix::identity(2))).unwrap();
        assert_eq!(sd.eigenvalues(), &[1.0, 1.0]);
        let sum = &sd.projector(0) + &sd.projector(1);
        assert!(sum.approx_eq(&ComplexMatrix::identity(2), 1e-14));
        assert_eq!(sd.eigenvector(0), &[c(1.0), c(0.0)]);
        assert_eq!(sd.eigenvector(1), &[c(0.0), c(1.0)]);
        assert_eq!(sd, spectral_decompose(&herm(ComplexMatrix::identity(2))).unwrap());
    }

    #[test]
    fn degenerate_basis_independent_of_rotation_path() {
        // U D U^dag and U R D R^dag U^dag are the same operator when R only mixes
        // the degenerate block of D; the returned bases must agree.
        let d = ComplexMatrix::from_diagonal(&[c(1.0), c(1.0), c(3.0)]);
        let gen = ComplexMatrix::from_row_major(
            3,
            vec![c(0.3), Complex64::new(0.2, 0.5), c(-0.4), Complex64::new(0.2, -0.5), c(-0.1), Complex64::new(0.0, 0.7), c(-0.4), Complex64::new(0.0, -0.7), c(0.6)],
        )
        .unwrap();
        let u = unitary_exp(&herm(gen), 1.3, &Tolerances::default()).unwrap().matrix().clone();
        let s = 0.5_f64.sqrt();
        let r = ComplexMatrix::from_row_major(
            3,
            vec![c(s), Complex64::new(0.0, s), c(0.0), Complex64::new(0.0, s), c(s), c(0.0), c(0.0), c(0.0), c(1.0)],
        )
        .unwrap();
        let a1 = &(&u * &d) * &u.adjoint();
        let ur = &u * &r;
        let a2 = &(&ur * &d) * &ur.adjoint();
        let a = spectral_decompose(&herm(a1)).unwrap();
        let b = spectral_decompose(&HermitianOperator::with_tolerance(a2, "A", 1e-10).unwrap()).unwrap();
        for k in 0..3 {
            for (x, y) in a.eigenvector(k).iter().zip(b.eigenvector(k)) {
                assert!((x - y).norm() < 1e-10, "vector {k} differs");
            }
        }
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let m = expm_hermitian(&herm(ComplexMatrix::zeros(2)), Complex64::new(0.3, -1.7)).unwrap();
        assert!(m.approx_eq(&ComplexMatrix::identity(2), 1e-15));
    }

    #[test]
    fn expm_diagonal_real_scale() {
        let m = expm_hermitian(&herm(pauli_matrix('Z')), c(-0.5)).unwrap();
        let expected = ComplexMatrix::from_diagonal(&[c((-0.5_f64).exp()), c(0.5_f64.exp())]);
        assert!(m.approx_eq(&expected, 1e-14));
    }

    #[test]
    fn expm_euler_formula() {
        let m = expm_hermitian(&herm(pauli_matrix('X')), Complex64::new(0.0, -PI / 2.0)).unwrap();
        let expected = pauli_matrix('X').scale(Complex64::new(0.0, -1.0));
        assert!(m.approx_eq(&expected, 1e-14));
    }

    #[test]
    fn expm_overflow_guard() {
        let err = expm_hermitian(&herm(pauli_matrix('Z').scale_real(800.0)), c(1.0)).unwrap_err();
        assert!(matches!(err, Error::Range { .. }));
        // Purely imaginary scale never overflows.
        assert!(expm_hermitian(&herm(pauli_matrix('Z').scale_real(800.0)), Complex64::new(0.0, 1.0)).is_ok());
    }

    #[test]
    fn sweep_cap_reports_non_convergence() {
        let m = &pauli_matrix('X') + &pauli_matrix('Z').scale_real(0.3);
        let tol = Tolerances { max_sweeps: 0, ..Tolerances::default() };
        let err = spectral_decompose_with(&herm(m), &tol).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { sweeps: 0, .. }));
    }

    #[test]
    fn imaginary_exponent_is_unitary() {
        let m = &pauli_matrix('Y').scale_real(0.7) + &pauli_matrix('Z').scale_real(-1.3);
        let u = unitary_exp(&herm(m), 2.1, &Tolerances::default()).unwrap();
        assert!(crate::algebra::unitarity_defect(u.matrix()) < 1e-13);
    }
}
