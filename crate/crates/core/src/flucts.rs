//! Ensemble estimators: integral and detailed fluctuation relations,
//! averages, and entropy production.
//!
//! Exponential averages are taken in log space and every sum is pairwise.
//! `lambda . (w + epsilon)` is always evaluated as `lambda . (Delta a - q)`,
//! which is defined on every record, including those with undefined epsilon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gge::{athermality, rel_entropy_coherence};
use crate::trajectories::{
    enumerate_ensemble_with, DeltaABasis, EnsembleOptions, JointSetup, PathEnsemble, ReverseIndex, Trajectory,
    TrajectoryRecord,
};

/// Mass above which estimators that drop records are flagged as approximate.
pub const APPROXIMATE_MASS: f64 = 1e-9;

/// How the exchange estimator obtains `lambda . epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeEpsilon {
    /// `lambda . (Delta a - q)` on every record.
    #[default]
    Identity,
    /// Stored epsilon; records where it is undefined are dropped.
    Recorded,
    /// Epsilon set to zero.
    Omitted,
}

/// Where `Delta c + Delta d` in the work estimator comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncrementSource {
    /// Stochastic increments per record.
    #[default]
    Stochastic,
    /// Endpoint differences `Delta C + Delta D` of the state functionals, the same on every record.
    Endpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exchange,
    Work,
}

/// Diagnostic switches that alter estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticFlags {
    /// Reverse paths start from `p^tau_i`.
    pub literal_eq5: bool,
    /// Drop epsilon from the estimators.
    pub force_epsilon_zero: bool,
    /// Charge change measured in the reference bases.
    pub mn_basis_variant: bool,
    /// Epsilon from the symmetrised operator form.
    pub literal_epsilon: bool,
}

impl DiagnosticFlags {
    pub fn ensemble_options(&self) -> EnsembleOptions {
        use crate::trajectories::EpsilonFormula;
        EnsembleOptions {
            reverse_index: if self.literal_eq5 { ReverseIndex::Literal } else { ReverseIndex::Final },
            delta_a_basis: if self.mn_basis_variant { DeltaABasis::Reference } else { DeltaABasis::Eigen },
            epsilon_formula: if self.literal_epsilon { EpsilonFormula::Literal } else { EpsilonFormula::Corrected },
        }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    /// `<w>` over records with defined epsilon.
    pub W: Vec<f64>,
    /// `<epsilon>` over records with defined epsilon.
    pub E: Vec<f64>,
    /// `<q>` over all records.
    pub Q: Vec<f64>,
    /// `<Delta a - q>` over all records.
    pub W_plus_E: Vec<f64>,
    /// Undriven setups only: `<epsilon>` with `Delta a - q` substituted where epsilon is undefined.
    pub E_identity: Option<Vec<f64>>,
    /// `<Delta c>` over records with defined increments.
    pub delta_C: f64,
    /// `<Delta d>` over records with defined increments.
    pub delta_D: f64,
    /// `C(pi^tau, pi^{r,tau}) - C(pi^0, pi^{r,0})`.
    pub delta_C_endpoint: f64,
    /// `D(pi^tau, pi^{r,tau}) - D(pi^0, pi^{r,0})`.
    pub delta_D_endpoint: f64,
    pub delta_C_gap: f64,
    pub delta_D_gap: f64,
    /// `F^{r,tau} - F^{r,0}`.
    pub delta_F_r: f64,
    /// `Delta F^r + Delta C + Delta D` from the endpoint functionals.
    pub delta_free_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProduction {
    pub sigma: f64,
    pub per_charge: Vec<f64>,
    /// `sum P ln(P / P^dag)`.
    pub kl: f64,
    /// Left minus right side of the second-law inequality, endpoint functionals on the right.
    pub second_law_gap: f64,
    /// Same with the averaged stochastic increments on the right.
    pub second_law_gap_stochastic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkFt {
    pub decomposition_route: f64,
    pub normalization_route: f64,
    /// Probability dropped from the decomposition route.
    pub excluded_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub trajectory: Trajectory,
    pub ln_ratio: f64,
    pub exponent: f64,
    pub residual: f64,
}

/// One work-relation estimate under a choice of ambiguous readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkVariant {
    pub reverse_index: ReverseIndex,
    pub delta_a_basis: DeltaABasis,
    pub increments: IncrementSource,
    pub decomposition_route: f64,
    pub normalization_route: f64,
    pub max_detailed_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FTReport {
    pub mode: Mode,
    pub flags: DiagnosticFlags,
    /// Exchange relation estimate; absent for driven setups.
    pub ft_exchange: Option<f64>,
    /// Decomposition route of the work relation.
    pub ft_work: f64,
    /// `sum_{P > 0} P^dag`.
    pub ft_normalization: f64,
    pub max_detailed_residual: f64,
    pub averages: Averages,
    pub sigma: f64,
    pub sigma_per_charge: Vec<f64>,
    pub sigma_kl: f64,
    pub second_law_gap: f64,
    pub second_law_gap_stochastic: f64,
    pub excluded_mass: f64,
    pub increment_excluded_mass: f64,
    /// Some estimator dropped more than [`APPROXIMATE_MASS`].
    pub approximate: bool,
    /// Largest `|Im|` of the epsilon ratio over valid records.
    pub max_epsilon_imag: f64,
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// `ln sum_k w_k exp(x_k)` over `w_k > 0`, shifted by the largest exponent.
pub fn log_weighted_sum_exp(weights: &[f64], exponents: &[f64]) -> f64 {
    let terms: Vec<f64> = weights
        .iter()
        .zip(exponents)
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, &x)| w.ln() + x)
        .collect();
    let shift = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return shift;
    }
    let scaled: Vec<f64> = terms.iter().map(|t| (t - shift).exp()).collect();
    shift + pairwise_sum(&scaled).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `<exp(x)>` over the records selected by `x` returning `Some`.
fn exp_average(records: &[TrajectoryRecord], x: impl Fn(&TrajectoryRecord) -> Option<f64>) -> f64 {
    let (w, e): (Vec<f64>, Vec<f64>) = records.iter().filter_map(|r| x(r).map(|e| (r.p_forward, e))).unzip();
    log_weighted_sum_exp(&w, &e).exp()
}

/// Probability-weighted sum of a per-record vector over records selected by `f`.
fn weighted_vec(records: &[TrajectoryRecord], n: usize, f: impl Fn(&TrajectoryRecord) -> Option<Vec<f64>>) -> Vec<f64> {
    let mut cols = vec![Vec::with_capacity(records.len()); n];
    for r in records {
        if let Some(v) = f(r) {
            for (c, x) in cols.iter_mut().zip(v) {
                c.push(r.p_forward * x);
            }
        }
    }
    cols.iter().map(|c| pairwise_sum(c)).collect()
}

fn weighted_scalar(records: &[TrajectoryRecord], f: impl Fn(&TrajectoryRecord) -> Option<f64>) -> f64 {
    let terms: Vec<f64> = records.iter().filter_map(|r| f(r).map(|x| r.p_forward * x)).collect();
    pairwise_sum(&terms)
}

/// `<exp(-lambda . epsilon - Delta lambda . q)>`.
pub fn integral_exchange_ft(ens: &PathEnsemble, eps: ExchangeEpsilon) -> Result<f64> {
    if !ens.setup.is_undriven() {
        return Err(Error::DrivenSetup);
    }
    let lambda = ens.setup.system_affinities();
    let gap = ens.setup.affinity_gap();
    Ok(exp_average(&ens.records, |r| {
        let le = match eps {
            ExchangeEpsilon::Identity => dot(lambda, &diff(&r.delta_a, &r.q)),
            ExchangeEpsilon::Recorded if r.epsilon_valid => dot(lambda, &r.epsilon),
            ExchangeEpsilon::Recorded => return None,
            ExchangeEpsilon::Omitted => 0.0,
        };
        Some(-le - dot(&gap, &r.q))
    }))
}

/// Endpoint `(Delta F^r, Delta C, Delta D)`.
fn endpoint_differences(setup: &JointSetup) -> Result<(f64, f64, f64)> {
    let df = setup.reference_final().massieu() - setup.reference_initial().massieu();
    let dc = rel_entropy_coherence(setup.system_final(), setup.reference_final())?
        - rel_entropy_coherence(setup.system_initial(), setup.reference_initial())?;
    let dd = athermality(setup.system_final(), setup.reference_final())?
        - athermality(setup.system_initial(), setup.reference_initial())?;
    Ok((df, dc, dd))
}

/// Per-record exponent `lambda . (w + epsilon) + Delta lambda . q - Delta F^r - Delta c - Delta d`.
///
/// With `include_epsilon = false` the epsilon term is dropped and records without
/// a defined `w` give `None`.
fn work_exponent(
    ens: &PathEnsemble,
    r: &TrajectoryRecord,
    increments: IncrementSource,
    include_epsilon: bool,
    endpoint: (f64, f64, f64),
) -> Option<f64> {
    let lambda = ens.setup.system_affinities();
    let gap = ens.setup.affinity_gap();
    let (df, dc_end, dd_end) = endpoint;
    let lw = if include_epsilon {
        dot(lambda, &diff(&r.delta_a, &r.q))
    } else if r.epsilon_valid {
        dot(lambda, &r.w)
    } else {
        return None;
    };
    let info = match increments {
        IncrementSource::Stochastic if r.increments_valid => r.delta_c + r.delta_d,
        IncrementSource::Stochastic => return None,
        IncrementSource::Endpoint => dc_end + dd_end,
    };
    Some(lw + dot(&gap, &r.q) - df - info)
}

pub fn integral_work_ft(ens: &PathEnsemble) -> Result<WorkFt> {
    integral_work_ft_with(ens, IncrementSource::Stochastic, true)
}

pub fn integral_work_ft_with(ens: &PathEnsemble, increments: IncrementSource, include_epsilon: bool) -> Result<WorkFt> {
    let endpoint = endpoint_differences(&ens.setup)?;
    let exponent = |r: &TrajectoryRecord| work_exponent(ens, r, increments, include_epsilon, endpoint);
    let decomposition_route = exp_average(&ens.records, |r| exponent(r).map(|x| -x));
    let excluded_mass = weighted_scalar(&ens.records, |r| exponent(r).is_none().then_some(1.0));
    Ok(WorkFt { decomposition_route, normalization_route: normalization_route(ens), excluded_mass })
}

/// `sum_{P > 0} P^dag = <P^dag / P>`.
pub fn normalization_route(ens: &PathEnsemble) -> f64 {
    let terms: Vec<f64> = ens.records.iter().filter(|r| r.p_forward > 0.0).map(|r| r.p_reverse).collect();
    pairwise_sum(&terms)
}

/// `ln(P / P^dag)` minus the claimed exponent on records where both exceed the floor.
pub fn detailed_residuals(ens: &PathEnsemble, mode: Mode) -> Result<(f64, Vec<ResidualRow>)> {
    detailed_residuals_with(ens, mode, IncrementSource::Stochastic)
}

pub fn detailed_residuals_with(
    ens: &PathEnsemble,
    mode: Mode,
    increments: IncrementSource,
) -> Result<(f64, Vec<ResidualRow>)> {
    let floor = ens.setup.tolerances().probability_floor;
    let lambda = ens.setup.system_affinities();
    let gap = ens.setup.affinity_gap();
    let endpoint = endpoint_differences(&ens.setup)?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for r in &ens.records {
        if r.p_forward <= floor || r.p_reverse <= floor {
            continue;
        }
        let exponent = match mode {
            Mode::Exchange if r.epsilon_valid => dot(lambda, &r.epsilon) + dot(&gap, &r.q),
            Mode::Exchange => continue,
            Mode::Work => match work_exponent(ens, r, increments, true, endpoint) {
                Some(x) => x,
                None => continue,
            },
        };
        let ln_ratio = (r.p_forward / r.p_reverse).ln();
        let residual = ln_ratio - exponent;
        worst = worst.max(residual.abs());
        rows.push(ResidualRow { trajectory: r.trajectory, ln_ratio, exponent, residual });
    }
    Ok((worst, rows))
}

pub fn ensemble_averages(ens: &PathEnsemble) -> Result<Averages> {
    let n = ens.n_charges();
    let rec = &ens.records;
    let w = weighted_vec(rec, n, |r| r.epsilon_valid.then(|| r.w.clone()));
    let e = weighted_vec(rec, n, |r| r.epsilon_valid.then(|| r.epsilon.clone()));
    let q = weighted_vec(rec, n, |r| Some(r.q.clone()));
    let w_plus_e = weighted_vec(rec, n, |r| Some(diff(&r.delta_a, &r.q)));
    let e_identity = ens.setup.is_undriven().then(|| {
        weighted_vec(rec, n, |r| Some(if r.epsilon_valid { r.epsilon.clone() } else { diff(&r.delta_a, &r.q) }))
    });
    let delta_c = weighted_scalar(rec, |r| r.increments_valid.then_some(r.delta_c));
    let delta_d = weighted_scalar(rec, |r| r.increments_valid.then_some(r.delta_d));
    let (df, dc_end, dd_end) = endpoint_differences(&ens.setup)?;
    Ok(Averages {
        W: w,
        E: e,
        Q: q,
        W_plus_E: w_plus_e,
        E_identity: e_identity,
        delta_C: delta_c,
        delta_D: delta_d,
        delta_C_endpoint: dc_end,
        delta_D_endpoint: dd_end,
        delta_C_gap: delta_c - dc_end,
        delta_D_gap: delta_d - dd_end,
        delta_F_r: df,
        delta_free_entropy: df + dc_end + dd_end,
    })
}

/// `<Sigma>` from averages, its per-charge split, and the relative-entropy cross-check.
pub fn entropy_production(ens: &PathEnsemble) -> Result<EntropyProduction> {
    let avg = ensemble_averages(ens)?;
    let lambda = ens.setup.system_affinities();
    let gap = ens.setup.affinity_gap();
    // Undriven: w vanishes, so W + E is the identity-substituted E.
    let work_like = avg.E_identity.as_ref().unwrap_or(&avg.W_plus_E);
    let per_charge: Vec<f64> =
        (0..lambda.len()).map(|k| lambda[k] * work_like[k] + gap[k] * avg.Q[k]).collect();
    let lhs = dot(lambda, work_like) + dot(&gap, &avg.Q);
    let sigma = lhs - avg.delta_free_entropy;
    let second_law_gap_stochastic = lhs - (avg.delta_F_r + avg.delta_C + avg.delta_D);
    Ok(EntropyProduction {
        sigma,
        per_charge,
        kl: relative_entropy(ens),
        second_law_gap: sigma,
        second_law_gap_stochastic,
    })
}

/// `sum P ln(P / P^dag)`; infinite if some `P > floor` has `P^dag <= floor`.
pub fn relative_entropy(ens: &PathEnsemble) -> f64 {
    let floor = ens.setup.tolerances().probability_floor;
    let mut terms = Vec::with_capacity(ens.records.len());
    for r in ens.records.iter().filter(|r| r.p_forward > floor) {
        if r.p_reverse <= floor {
            return f64::INFINITY;
        }
        terms.push(r.p_forward * (r.p_forward / r.p_reverse).ln());
    }
    pairwise_sum(&terms)
}

pub fn ft_report(ens: &PathEnsemble, flags: DiagnosticFlags) -> Result<FTReport> {
    let undriven = ens.setup.is_undriven();
    let mode = if undriven { Mode::Exchange } else { Mode::Work };
    let ft_exchange = if undriven {
        let eps = if flags.force_epsilon_zero { ExchangeEpsilon::Omitted } else { ExchangeEpsilon::Identity };
        Some(integral_exchange_ft(ens, eps)?)
    } else {
        None
    };
    let work = integral_work_ft_with(ens, IncrementSource::Stochastic, !flags.force_epsilon_zero)?;
    let (max_detailed_residual, _) = detailed_residuals(ens, mode)?;
    let averages = ensemble_averages(ens)?;
    let sp = entropy_production(ens)?;
    let max_epsilon_imag = ens
        .records
        .iter()
        .filter(|r| r.epsilon_valid)
        .flat_map(|r| r.epsilon_imag.iter().map(|x| x.abs()))
        .fold(0.0, f64::max);
    let dropped = ens.excluded_mass.max(ens.increment_excluded_mass).max(work.excluded_mass);
    Ok(FTReport {
        mode,
        flags,
        ft_exchange,
        ft_work: work.decomposition_route,
        ft_normalization: work.normalization_route,
        max_detailed_residual,
        averages,
        sigma: sp.sigma,
        sigma_per_charge: sp.per_charge,
        sigma_kl: sp.kl,
        second_law_gap: sp.second_law_gap,
        second_law_gap_stochastic: sp.second_law_gap_stochastic,
        excluded_mass: ens.excluded_mass,
        increment_excluded_mass: ens.increment_excluded_mass,
        approximate: dropped > APPROXIMATE_MASS,
        max_epsilon_imag,
    })
}

/// Work relation under both reverse-path readings, both charge-change bases,
/// and both increment sources.
pub fn work_ft_variants(setup: &JointSetup) -> Result<Vec<WorkVariant>> {
    let mut out = Vec::with_capacity(8);
    for reverse_index in [ReverseIndex::Final, ReverseIndex::Literal] {
        for delta_a_basis in [DeltaABasis::Eigen, DeltaABasis::Reference] {
            let opts = EnsembleOptions { reverse_index, delta_a_basis, ..EnsembleOptions::default() };
            let ens = enumerate_ensemble_with(setup, opts)?;
            for increments in [IncrementSource::Stochastic, IncrementSource::Endpoint] {
                let ft = integral_work_ft_with(&ens, increments, true)?;
                let (max_detailed_residual, _) = detailed_residuals_with(&ens, Mode::Work, increments)?;
                out.push(WorkVariant {
                    reverse_index,
                    delta_a_basis,
                    increments,
                    decomposition_route: ft.decomposition_route,
                    normalization_route: ft.normalization_route,
                    max_detailed_residual,
                });
            }
        }
    }
    Ok(out)
}

/// Variant whose decomposition route is closest to one.
pub fn best_work_variant(variants: &[WorkVariant]) -> Option<&WorkVariant> {
    variants.iter().min_by(|a, b| {
        (a.decomposition_route - 1.0).abs().total_cmp(&(b.decomposition_route - 1.0).abs())
    })
}

/// Largest change in the report's scalar estimators when every degenerate
/// eigenspace is re-spanned at random; zero when no state is degenerate.
pub fn degeneracy_spread(setup: &JointSetup, options: EnsembleOptions, seed: u64) -> Result<f64> {
    if setup.max_degeneracy() < 2 {
        return Ok(0.0);
    }
    let flags = DiagnosticFlags::default();
    let base = ft_report(&enumerate_ensemble_with(setup, options)?, flags)?;
    let rotated = ft_report(&enumerate_ensemble_with(&setup.with_rotated_degenerate_bases(seed)?, options)?, flags)?;
    let pairs = [
        (base.ft_work, rotated.ft_work),
        (base.ft_normalization, rotated.ft_normalization),
        (base.sigma, rotated.sigma),
        (base.sigma_kl, rotated.sigma_kl),
        (base.ft_exchange.unwrap_or(0.0), rotated.ft_exchange.unwrap_or(0.0)),
    ];
    let vec_pairs = [
        (&base.averages.E, &rotated.averages.E),
        (&base.averages.Q, &rotated.averages.Q),
        (&base.averages.W_plus_E, &rotated.averages.W_plus_E),
    ];
    let scalar = pairs.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let vector = vec_pairs
        .iter()
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    Ok(scalar.max(vector))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{pauli_matrix, tensor, ComplexMatrix, HermitianOperator};
    use crate::dynamics::{propagate, DrivenOperator, LinearRamp, PropagatorConfig, Protocol, Schedule};
    use crate::tolerances::Tolerances;
    use crate::trajectories::enumerate_ensemble;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn pauli(c: char) -> HermitianOperator {
        HermitianOperator::new(pauli_matrix(c), c.to_string()).unwrap()
    }

    fn setup(theta: f64, g0: f64, g_tau: f64, coupling: f64, beta_r: f64) -> JointSetup {
        let mut v = ComplexMatrix::zeros(4);
        for c in ['X', 'Y', 'Z'] {
            v = &v + &tensor(&pauli_matrix(c), &pauli_matrix(c));
        }
        let v = HermitianOperator::new(v.scale_real(coupling), "V").unwrap();
        let ramp = Schedule::Linear(LinearRamp::new(g0, g_tau, PI).unwrap());
        let h = DrivenOperator::new(
            vec![(ramp, pauli('Z').scale(theta.cos() / 2.0)), (Schedule::Constant(1.0), pauli('X').scale(theta.sin() / 2.0))],
            "H",
        )
        .unwrap();
        let charges = vec![
            DrivenOperator::constant(pauli('X')),
            DrivenOperator::constant(pauli('Y')),
            DrivenOperator::new(vec![(ramp, pauli('Z'))], "gZ").unwrap(),
        ];
        let protocol =
            Protocol::new(PI, h, pauli('Z').scale(0.5), v, charges, vec![pauli('X'), pauli('Y'), pauli('Z')]).unwrap();
        let u = propagate(&protocol, &PropagatorConfig::default()).unwrap();
        let lambda = vec![theta.sin() / 2.0, 0.0, theta.cos() / 2.0];
        JointSetup::new(protocol, lambda, vec![0.0, 0.0, beta_r / 2.0], u, Tolerances::default()).unwrap()
    }

    #[test]
    fn pairwise_and_log_sum() {
        let xs: Vec<f64> = (0..1000).map(|k| 0.1 + k as f64 * 1e-3).collect();
        assert!((pairwise_sum(&xs) - xs.iter().sum::<f64>()).abs() < 1e-10);
        let v = log_weighted_sum_exp(&[0.25, 0.75, 0.0], &[800.0, 800.0, 1e9]);
        assert!((v - 800.0).abs() < 1e-12);
        assert_eq!(log_weighted_sum_exp(&[0.0], &[1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn exchange_ft_is_one_across_theta() {
        for k in 0..=8 {
            let theta = PI * k as f64 / 8.0;
            let ens = enumerate_ensemble(&setup(theta, 1.0, 1.0, 1.0, 0.5)).unwrap();
            let ft = integral_exchange_ft(&ens, ExchangeEpsilon::Identity).unwrap();
            assert!((ft - 1.0).abs() < 1e-10, "theta {theta}: {ft}");
        }
    }

    #[test]
    fn omitting_epsilon_breaks_exchange_ft() {
        let ens = enumerate_ensemble(&setup(FRAC_PI_2, 1.0, 1.0, 1.0, 0.5)).unwrap();
        let ft = integral_exchange_ft(&ens, ExchangeEpsilon::Omitted).unwrap();
        assert!((ft - 1.0).abs() > 1e-3);
    }

    #[test]
    fn commuting_exchange_ft_is_heat_ft() {
        let ens = enumerate_ensemble(&setup(0.0, 1.0, 1.0, 1.0, 0.5)).unwrap();
        let gap = ens.setup.affinity_gap();
        let direct = exp_average(&ens.records, |r| Some(-gap[2] * r.q[2]));
        assert!((direct - 1.0).abs() < 1e-10);
        assert!((integral_exchange_ft(&ens, ExchangeEpsilon::Identity).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn exchange_estimator_rejects_driven_setup() {
        let ens = enumerate_ensemble(&setup(0.4, 10.0, 0.1, 1.0, 0.5)).unwrap();
        assert_eq!(integral_exchange_ft(&ens, ExchangeEpsilon::Identity), Err(Error::DrivenSetup));
    }

    #[test]
    fn normalization_route_is_one() {
        for s in [setup(0.4, 10.0, 0.1, 1.0, 0.5), setup(2.0, 1.0, 1.0, 1.0, 0.5)] {
            let ens = enumerate_ensemble(&s).unwrap();
            assert!((integral_work_ft(&ens).unwrap().normalization_route - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn trivial_work_ft_when_everything_vanishes() {
        // Commuting, undriven, lambda = lambda^R: every exponent is zero on the support.
        let ens = enumerate_ensemble(&setup(0.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        let ft = integral_work_ft(&ens).unwrap();
        assert!((ft.decomposition_route - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exchange_detailed_residuals_vanish() {
        for theta in [0.0, 0.8, FRAC_PI_2, 2.7, PI] {
            let ens = enumerate_ensemble(&setup(theta, 1.0, 1.0, 1.0, 0.5)).unwrap();
            let (worst, rows) = detailed_residuals(&ens, Mode::Exchange).unwrap();
            assert!(worst < 1e-9, "theta {theta}: {worst}");
            assert!(!rows.is_empty());
        }
    }

    #[test]
    fn driven_work_residual_table_is_emitted() {
        let ens = enumerate_ensemble(&setup(1.0, 10.0, 0.1, 1.0, 0.5)).unwrap();
        let (worst, rows) = detailed_residuals(&ens, Mode::Work).unwrap();
        assert!(worst.is_finite());
        assert!(rows.iter().all(|r| (r.ln_ratio - r.exponent - r.residual).abs() < 1e-12));
    }

    #[test]
    fn ratio_closes_with_reference_basis_charge_change() {
        // ln(P / P^dag) = lambda^R . (Delta a_ref - q) - Delta F^r - Delta c - Delta d on the support.
        for s in [setup(0.7, 10.0, 0.1, 1.0, 0.5), setup(2.2, 1.0, 1.0, 1.0, 0.5)] {
            let opts = EnsembleOptions { delta_a_basis: DeltaABasis::Reference, ..EnsembleOptions::default() };
            let ens = enumerate_ensemble_with(&s, opts).unwrap();
            let (df, _, _) = endpoint_differences(&s).unwrap();
            let lr = s.reservoir_affinities();
            let mut checked = 0;
            for r in ens.records.iter().filter(|r| r.p_forward > 1e-12 && r.p_reverse > 1e-12 && r.increments_valid) {
                let rhs = dot(lr, &diff(&r.delta_a, &r.q)) - df - r.delta_c - r.delta_d;
                assert!(((r.p_forward / r.p_reverse).ln() - rhs).abs() < 1e-8);
                checked += 1;
            }
            assert!(checked > 0);
        }
    }

    #[test]
    fn commuting_exchange_averages() {
        let ens = enumerate_ensemble(&setup(0.0, 1.0, 1.0, 1.0, 0.5)).unwrap();
        let avg = ensemble_averages(&ens).unwrap();
        let sp = entropy_production(&ens).unwrap();
        assert!(avg.E_identity.as_ref().unwrap()[2].abs() < 1e-10);
        let gap = ens.setup.affinity_gap();
        assert!((sp.per_charge[2] - gap[2] * avg.Q[2]).abs() < 1e-10);
    }

    #[test]
    fn non_abelian_term_negative_past_half_pi() {
        let ens = enumerate_ensemble(&setup(2.4, 1.0, 1.0, 1.0, 0.5)).unwrap();
        assert!(ensemble_averages(&ens).unwrap().E_identity.unwrap()[2] < 0.0);
    }

    #[test]
    fn uncoupled_averages_vanish() {
        let ens = enumerate_ensemble(&setup(0.9, 1.0, 1.0, 0.0, 0.5)).unwrap();
        let avg = ensemble_averages(&ens).unwrap();
        for v in [&avg.Q, &avg.W_plus_E, avg.E_identity.as_ref().unwrap()] {
            assert!(v.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn symmetric_exchange_has_zero_sigma() {
        let ens = enumerate_ensemble(&setup(0.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        let sp = entropy_production(&ens).unwrap();
        assert!(sp.sigma.abs() < 1e-14 && sp.kl.abs() < 1e-14);
    }

    #[test]
    fn exchange_sigma_matches_relative_entropy() {
        for k in 0..=8 {
            let theta = PI * k as f64 / 8.0;
            let ens = enumerate_ensemble(&setup(theta, 1.0, 1.0, 1.0, 0.5)).unwrap();
            let sp = entropy_production(&ens).unwrap();
            assert!(sp.sigma >= -1e-12);
            assert!((sp.sigma - sp.kl).abs() < 1e-9, "theta {theta}: {} vs {}", sp.sigma, sp.kl);
            assert!((sp.per_charge.iter().sum::<f64>() - sp.sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn report_serialises_with_documented_keys() {
        let ens = enumerate_ensemble(&setup(1.0, 1.0, 1.0, 1.0, 0.5)).unwrap();
        let report = ft_report(&ens, DiagnosticFlags::default()).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["ft_exchange", "ft_work", "ft_normalization", "max_detailed_residual", "averages", "sigma", "excluded_mass"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        for key in ["W", "E", "Q", "delta_C", "delta_D", "delta_F_r", "delta_free_entropy"] {
            assert!(json["averages"].get(key).is_some(), "{key}");
        }
        let back: FTReport = serde_json::from_value(json).unwrap();
        assert_eq!(back.mode, Mode::Exchange);
    }

    #[test]
    fn variants_cover_all_readings() {
        let v = work_ft_variants(&setup(0.0, 1.0, 1.0, 1.0, 0.5)).unwrap();
        assert_eq!(v.len(), 8);
        assert!(best_work_variant(&v).is_some());
        let literal: Vec<_> = v.iter().filter(|x| x.reverse_index == ReverseIndex::Literal).collect();
        assert_eq!(literal.len(), 4);
    }

    #[test]
    fn no_degeneracy_gives_zero_spread() {
        let s = setup(1.0, 1.0, 1.0, 1.0, 0.5);
        assert_eq!(degeneracy_spread(&s, EnsembleOptions::default(), 3).unwrap(), 0.0);
    }
}
