//! Generalized Gibbs states `exp(F - lambda . A)` and the information
//! functionals measured against a reference state.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{spectral_decompose_with, ComplexMatrix, HermitianOperator, SpectralDecomposition};
use crate::error::{Error, Result};
use crate::tolerances::Tolerances;

/// Charges `A_k` paired with affinities `lambda_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeSet {
    charges: Vec<HermitianOperator>,
    affinities: Vec<f64>,
    label: String,
}

impl ChargeSet {
    pub fn new(charges: Vec<HermitianOperator>, affinities: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if charges.len() != affinities.len() {
            return Err(Error::DimensionMismatch { expected: charges.len(), found: affinities.len() });
        }
        let first = charges.first().ok_or_else(|| Error::Invalid("charge set is empty".into()))?;
        if let Some(bad) = charges.iter().find(|c| c.dim() != first.dim()) {
            return Err(Error::DimensionMismatch { expected: first.dim(), found: bad.dim() });
        }
        if let Some(l) = affinities.iter().find(|l| !l.is_finite()) {
            return Err(Error::Invalid(format!("affinity {l} is not finite")));
        }
        Ok(Self { charges, affinities, label: label.into() })
    }

    pub fn charges(&self) -> &[HermitianOperator] {
        &self.charges
    }

    pub fn affinities(&self) -> &[f64] {
        &self.affinities
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.charges[0].dim()
    }

    /// Same charges, different affinities.
    pub fn with_affinities(&self, affinities: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        Self::new(self.charges.clone(), affinities, label)
    }

    /// `sum_k lambda_k A_k`.
    pub fn contraction(&self) -> HermitianOperator {
        HermitianOperator::linear_combination(&self.affinities, &self.charges, format!("lambda.A[{}]", self.label))
            .expect("charge set invariants guarantee matching shapes")
    }
}

/// Non-negative weights summing to one, tied to a named basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector {
    probs: Vec<f64>,
    basis_label: String,
}

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>, basis_label: impl Into<String>) -> Result<Self> {
        if let Some((k, &p)) = probs.iter().enumerate().find(|(_, &p)| p < -1e-12 || !p.is_finite()) {
            return Err(Error::Invalid(format!("probability {p} at index {k}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Invalid(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs, basis_label: basis_label.into() })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn basis_label(&self) -> &str {
        &self.basis_label
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Generalized Gibbs state with its eigenbasis fixed at construction.
///
/// `spectrum` decomposes the contraction `lambda . A`; eigenvector `k` carries
/// probability `probabilities[k]`, so probabilities come out descending.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    density: ComplexMatrix,
    massieu: f64,
    spectrum: SpectralDecomposition,
    probabilities: Vec<f64>,
    source: ChargeSet,
    tolerances: Tolerances,
}

impl GibbsState {
    pub fn density(&self) -> &ComplexMatrix {
        &self.density
    }

    pub fn massieu(&self) -> f64 {
        self.massieu
    }

    pub fn spectrum(&self) -> &SpectralDecomposition {
        &self.spectrum
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn eigenvector(&self, k: usize) -> &[Complex64] {
        self.spectrum.eigenvector(k)
    }

    pub fn source(&self) -> &ChargeSet {
        &self.source
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tolerances
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    /// Von Neumann entropy in nats.
    pub fn entropy(&self) -> f64 {
        shannon_entropy(&self.probabilities, self.tolerances.probability_floor)
    }

    /// Same state written in another eigenbasis; only meaningful within degenerate groups.
    pub(crate) fn with_basis(&self, eigenvectors: Vec<Vec<Complex64>>) -> Self {
        let spectrum = self.spectrum.with_eigenvectors(eigenvectors);
        let weights: Vec<Complex64> = self.probabilities.iter().map(|&p| Complex64::new(p, 0.0)).collect();
        let density = ComplexMatrix::from_weighted_projectors(spectrum.eigenvectors(), &weights);
        Self { density, spectrum, ..self.clone() }
    }
}

/// `F = -ln Tr exp(-lambda . A)`.
pub fn massieu_potential(cs: &ChargeSet) -> Result<f64> {
    massieu_potential_with(cs, &Tolerances::default())
}

pub fn massieu_potential_with(cs: &ChargeSet, tol: &Tolerances) -> Result<f64> {
    let sd = spectral_decompose_with(&cs.contraction(), tol)?;
    Ok(log_partition(sd.eigenvalues(), tol.exponent_limit)?.0)
}

/// Returns `(F, p)` with `p_k = exp(F - e_k)`, shifted by the smallest eigenvalue.
fn log_partition(eigenvalues: &[f64], limit: f64) -> Result<(f64, Vec<f64>)> {
    let e_min = eigenvalues[0];
    let e_max = eigenvalues[eigenvalues.len() - 1];
    if !(e_max - e_min).is_finite() || e_max - e_min > limit {
        return Err(Error::Range { value: e_max - e_min, limit });
    }
    let weights: Vec<f64> = eigenvalues.iter().map(|e| (-(e - e_min)).exp()).collect();
    let z: f64 = weights.iter().sum();
    let massieu = e_min - z.ln();
    Ok((massieu, weights.into_iter().map(|w| w / z).collect()))
}

pub fn build_gibbs_state(cs: &ChargeSet) -> Result<GibbsState> {
    build_gibbs_state_with(cs, &Tolerances::default())
}

pub fn build_gibbs_state_with(cs: &ChargeSet, tol: &Tolerances) -> Result<GibbsState> {
    let spectrum = spectral_decompose_with(&cs.contraction(), tol)?;
    let (massieu, probabilities) = log_partition(spectrum.eigenvalues(), tol.exponent_limit)?;
    let weights: Vec<Complex64> = probabilities.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    let density = ComplexMatrix::from_weighted_projectors(spectrum.eigenvectors(), &weights);
    Ok(GibbsState { density, massieu, spectrum, probabilities, source: cs.clone(), tolerances: *tol })
}

/// `p^d_m = <m^r| pi |m^r>` over the reference eigenbasis, in reference order.
pub fn dephased_distribution(state: &GibbsState, reference: &GibbsState) -> Result<ProbabilityVector> {
    check_dims(state, reference)?;
    let probs = reference
        .spectrum
        .eigenvectors()
        .iter()
        .map(|m| {
            state
                .spectrum
                .eigenvectors()
                .iter()
                .zip(&state.probabilities)
                .map(|(i, p)| p * overlap_sq(m, i))
                .sum()
        })
        .collect();
    ProbabilityVector::new(probs, reference.source.label())
}

/// `S(p^d) - S(pi)`.
pub fn rel_entropy_coherence(state: &GibbsState, reference: &GibbsState) -> Result<f64> {
    let pd = dephased_distribution(state, reference)?;
    let floor = state.tolerances.probability_floor;
    Ok(shannon_entropy(pd.probs(), floor) - state.entropy())
}

/// `KL(p^d || p^r)` with `p^r` the reference eigenvalues.
pub fn athermality(state: &GibbsState, reference: &GibbsState) -> Result<f64> {
    let floor = state.tolerances.probability_floor;
    if let Some((index, &value)) = reference.probabilities.iter().enumerate().find(|(_, &p)| p < floor) {
        return Err(Error::Rank { index, value });
    }
    let pd = dephased_distribution(state, reference)?;
    Ok(pd
        .probs()
        .iter()
        .zip(&reference.probabilities)
        .filter(|(&d, _)| d >= floor)
        .map(|(&d, &r)| d * (d / r).ln())
        .sum())
}

/// `F^r + C + D`.
pub fn noneq_free_entropy(state: &GibbsState, reference: &GibbsState) -> Result<f64> {
    Ok(reference.massieu + rel_entropy_coherence(state, reference)? + athermality(state, reference)?)
}

/// `-sum p ln p`, skipping entries below `floor`.
pub fn shannon_entropy(probs: &[f64], floor: f64) -> f64 {
    -probs.iter().filter(|&&p| p >= floor).map(|&p| p * p.ln()).sum::<f64>()
}

/// `|<a|b>|^2`.
pub fn overlap_sq(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm_sqr()
}

fn check_dims(a: &GibbsState, b: &GibbsState) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(())
}
