//! Trajectory lattice `Gamma = (i, mu, m, j, nu, n)` over the eigenbases of
//! `(pi^0, rho^R, pi^{r,0}, pi^tau, rho^R, pi^{r,tau})`, with forward and
//! reverse path probabilities and the stochastic first-law terms.

use std::io::{self, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{tensor, tensor_vec, ComplexMatrix, HermitianOperator, UnitaryOperator};
use crate::dynamics::Protocol;
use crate::error::{Error, Result};
use crate::format::sig17;
use crate::gge::{build_gibbs_state_with, dephased_distribution, overlap_sq, ChargeSet, GibbsState};
use crate::tolerances::Tolerances;

/// Endpoint states, reservoir and propagator for one protocol.
#[derive(Debug, Clone)]
pub struct JointSetup {
    system_initial: GibbsState,
    system_final: GibbsState,
    reservoir: GibbsState,
    reference_initial: GibbsState,
    reference_final: GibbsState,
    dephased_initial: Vec<f64>,
    dephased_final: Vec<f64>,
    protocol: Protocol,
    propagator: UnitaryOperator,
    charge_names: Vec<String>,
    tolerances: Tolerances,
}

impl JointSetup {
    /// Builds `pi^t = exp(F - lambda . A^t)`, `pi^{r,t} = exp(F^{r,t} - lambda^R . A^t)` and
    /// `rho^R = exp(F^R - lambda^R . A^R)` for `t in {0, tau}`.
    pub fn new(
        protocol: Protocol,
        system_affinities: Vec<f64>,
        reservoir_affinities: Vec<f64>,
        propagator: UnitaryOperator,
        tolerances: Tolerances,
    ) -> Result<Self> {
        let (ds, dr) = (protocol.system_dim(), protocol.reservoir_dim());
        if propagator.dim() != ds * dr {
            return Err(Error::DimensionMismatch { expected: ds * dr, found: propagator.dim() });
        }
        let a0 = protocol.system_charges_at(0.0)?;
        let at = protocol.system_charges_at(protocol.duration())?;
        let ar = protocol.reservoir_charges().to_vec();
        let gibbs = |charges: Vec<HermitianOperator>, lambda: &[f64], label: &str| {
            build_gibbs_state_with(&ChargeSet::new(charges, lambda.to_vec(), label)?, &tolerances)
        };
        let system_initial = gibbs(a0.clone(), &system_affinities, "pi0")?;
        let system_final = gibbs(at.clone(), &system_affinities, "pitau")?;
        let reservoir = gibbs(ar, &reservoir_affinities, "rhoR")?;
        let reference_initial = gibbs(a0, &reservoir_affinities, "pir0")?;
        let reference_final = gibbs(at, &reservoir_affinities, "pirtau")?;
        let charge_names = (1..=system_affinities.len()).map(|k| k.to_string()).collect();
        Self::assemble(
            [system_initial, system_final, reservoir, reference_initial, reference_final],
            protocol,
            propagator,
            charge_names,
            tolerances,
        )
    }

    fn assemble(
        states: [GibbsState; 5],
        protocol: Protocol,
        propagator: UnitaryOperator,
        charge_names: Vec<String>,
        tolerances: Tolerances,
    ) -> Result<Self> {
        let [system_initial, system_final, reservoir, reference_initial, reference_final] = states;
        let dephased_initial = dephased_distribution(&system_initial, &reference_initial)?.probs().to_vec();
        let dephased_final = dephased_distribution(&system_final, &reference_final)?.probs().to_vec();
        Ok(Self {
            system_initial,
            system_final,
            reservoir,
            reference_initial,
            reference_final,
            dephased_initial,
            dephased_final,
            protocol,
            propagator,
            charge_names,
            tolerances,
        })
    }

    pub fn with_charge_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_charges() {
            return Err(Error::DimensionMismatch { expected: self.n_charges(), found: names.len() });
        }
        self.charge_names = names;
        Ok(self)
    }

    pub fn system_initial(&self) -> &GibbsState {
        &self.system_initial
    }

    pub fn system_final(&self) -> &GibbsState {
        &self.system_final
    }

    pub fn reservoir(&self) -> &GibbsState {
        &self.reservoir
    }

    pub fn reference_initial(&self) -> &GibbsState {
        &self.reference_initial
    }

    pub fn reference_final(&self) -> &GibbsState {
        &self.reference_final
    }

    /// `p^{d,0}` over the `pi^{r,0}` basis.
    pub fn dephased_initial(&self) -> &[f64] {
        &self.dephased_initial
    }

    /// `p^{d,tau}` over the `pi^{r,tau}` basis.
    pub fn dephased_final(&self) -> &[f64] {
        &self.dephased_final
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn propagator(&self) -> &UnitaryOperator {
        &self.propagator
    }

    pub fn charge_names(&self) -> &[String] {
        &self.charge_names
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tolerances
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.protocol.system_dim(), self.protocol.reservoir_dim())
    }

    pub fn n_charges(&self) -> usize {
        self.system_initial.source().len()
    }

    /// `lambda`.
    pub fn system_affinities(&self) -> &[f64] {
        self.system_initial.source().affinities()
    }

    /// `lambda^R`.
    pub fn reservoir_affinities(&self) -> &[f64] {
        self.reservoir.source().affinities()
    }

    /// `lambda - lambda^R`.
    pub fn affinity_gap(&self) -> Vec<f64> {
        self.system_affinities().iter().zip(self.reservoir_affinities()).map(|(a, b)| a - b).collect()
    }

    pub fn is_undriven(&self) -> bool {
        self.protocol.is_undriven()
    }

    pub fn lattice_size(&self) -> usize {
        let (ds, dr) = self.dims();
        ds * ds * dr * dr * ds * ds
    }

    /// Copy with every degenerate eigenspace of the five states re-spanned by a random unitary.
    pub fn with_rotated_degenerate_bases(&self, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tol = self.tolerances.degeneracy;
        let states = [
            &self.system_initial,
            &self.system_final,
            &self.reservoir,
            &self.reference_initial,
            &self.reference_final,
        ]
        .map(|s| rotate_degenerate(s, tol, &mut rng));
        Self::assemble(states, self.protocol.clone(), self.propagator.clone(), self.charge_names.clone(), self.tolerances)
    }

    /// Largest eigenspace dimension across the five states.
    pub fn max_degeneracy(&self) -> usize {
        [&self.system_initial, &self.system_final, &self.reservoir, &self.reference_initial, &self.reference_final]
            .iter()
            .flat_map(|s| s.spectrum().degenerate_groups(self.tolerances.degeneracy))
            .map(|g| g.len())
            .max()
            .unwrap_or(1)
    }

    fn check(&self, g: &Trajectory) -> Result<()> {
        let (ds, dr) = self.dims();
        let ok = g.i < ds && g.m < ds && g.j < ds && g.n < ds && g.mu < dr && g.nu < dr;
        if !ok {
            return Err(Error::Invalid(format!("trajectory {g:?} outside lattice ({ds}, {dr})")));
        }
        Ok(())
    }

    /// `|i^0, mu>`.
    fn initial_ket(&self, i: usize, mu: usize) -> Vec<Complex64> {
        tensor_vec(self.system_initial.eigenvector(i), self.reservoir.eigenvector(mu))
    }

    /// `|j^tau, nu>`.
    fn final_ket(&self, j: usize, nu: usize) -> Vec<Complex64> {
        tensor_vec(self.system_final.eigenvector(j), self.reservoir.eigenvector(nu))
    }
}

fn rotate_degenerate(state: &GibbsState, tol: f64, rng: &mut ChaCha8Rng) -> GibbsState {
    let mut vectors = state.spectrum().eigenvectors().to_vec();
    for group in state.spectrum().degenerate_groups(tol) {
        let g = group.len();
        if g < 2 {
            continue;
        }
        let mixing = random_unitary_columns(g, rng);
        let old: Vec<Vec<Complex64>> = vectors[group.clone()].to_vec();
        for (c, slot) in group.enumerate() {
            vectors[slot] = (0..old[0].len())
                .map(|r| (0..g).map(|k| old[k][r] * mixing[c][k]).sum())
                .collect();
        }
    }
    state.with_basis(vectors)
}

/// Columns of a random `g x g` unitary by Gram-Schmidt on uniform complex vectors.
fn random_unitary_columns(g: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Complex64>> {
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(g);
    while cols.len() < g {
        let mut v: Vec<Complex64> =
            (0..g).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        for c in &cols {
            let dot: Complex64 = c.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            for (x, y) in v.iter_mut().zip(c) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    cols
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub i: usize,
    pub mu: usize,
    pub m: usize,
    pub j: usize,
    pub nu: usize,
    pub n: usize,
}

/// Which final-state weight starts the reversed path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReverseIndex {
    /// `p^tau_j`: the reversed path starts where the forward one ended.
    #[default]
    Final,
    /// `p^tau_i`, read literally.
    Literal,
}

/// Outcomes entering the local charge change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaABasis {
    /// `<j|A^tau|j> - <i|A^0|i>`.
    #[default]
    Eigen,
    /// `<n^r|A^tau|n^r> - <m^r|A^0|m^r>`.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonFormula {
    /// Closes `Delta a - q = epsilon` whenever `[V, A + A^R] = 0`.
    #[default]
    Corrected,
    /// Operators `O^tau`, `O^0` built with the symmetrised `A^tau (1 - Pi) + (1 - Pi) A^0` form.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleOptions {
    pub reverse_index: ReverseIndex,
    pub delta_a_basis: DeltaABasis,
    pub epsilon_formula: EpsilonFormula,
}

/// Joint-space operators sandwiching `V` in the epsilon ratio for one charge.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonKernel {
    pub o_tau: ComplexMatrix,
    pub o_0: ComplexMatrix,
}

impl EpsilonKernel {
    pub fn build(setup: &JointSetup, k: usize, g: &Trajectory, formula: EpsilonFormula) -> Result<Self> {
        setup.check(g)?;
        let (ds, dr) = setup.dims();
        let a0 = setup.system_initial.source().charges()[k].matrix();
        let at = setup.system_final.source().charges()[k].matrix();
        let ar = setup.reservoir.source().charges()[k].matrix();
        let one_s = ComplexMatrix::identity(ds);
        let one_r = ComplexMatrix::identity(dr);
        let q_j = &one_s - &setup.system_final.spectrum().projector(g.j);
        let q_i = &one_s - &setup.system_initial.spectrum().projector(g.i);
        let q_nu = &one_r - &setup.reservoir.spectrum().projector(g.nu);
        let q_mu = &one_r - &setup.reservoir.spectrum().projector(g.mu);
        let (sys_tau, sys_0) = match formula {
            EpsilonFormula::Corrected => {
                let mean = (a0 + at).scale_real(0.5);
                (&mean * &q_j, &q_i * &mean)
            }
            EpsilonFormula::Literal => {
                let tau = (&(at * &q_j) + &(&q_j * a0)).scale_real(0.5);
                let zero = (&(at * &q_i) + &(&q_i * a0)).scale_real(0.5);
                (tau, zero)
            }
        };
        let o_tau = &tensor(&sys_tau, &one_r) + &tensor(&one_s, &(ar * &q_nu));
        let o_0 = &tensor(&sys_0, &one_r) + &tensor(&one_s, &(&q_mu * ar));
        Ok(Self { o_tau, o_0 })
    }
}

/// Non-Abelian term for one `(i, mu, j, nu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonValue {
    /// Real part of the ratio plus the `Delta A` correction; NaN when invalid.
    pub values: Vec<f64>,
    /// Imaginary part of the ratio.
    pub imag: Vec<f64>,
    pub valid: bool,
    /// `|<j,nu|V|i,mu>|`.
    pub v_element_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub trajectory: Trajectory,
    pub p_forward: f64,
    pub p_reverse: f64,
    pub delta_a: Vec<f64>,
    pub q: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub epsilon_imag: Vec<f64>,
    pub epsilon_valid: bool,
    pub w: Vec<f64>,
    pub delta_c: f64,
    pub delta_d: f64,
    /// False when a probability entering `Delta c`, `Delta d` is below the floor.
    pub increments_valid: bool,
    pub v_element_magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub records: Vec<TrajectoryRecord>,
    /// Forward probability on records with undefined epsilon.
    pub excluded_mass: f64,
    /// Forward probability on records with undefined `Delta c` or `Delta d`.
    pub increment_excluded_mass: f64,
    pub options: EnsembleOptions,
    pub setup: JointSetup,
}

impl PathEnsemble {
    pub fn n_charges(&self) -> usize {
        self.setup.n_charges()
    }

    /// CSV with columns `i,mu,m,j,nu,n,p_fwd,p_rev,da_*,q_*,eps_*,w_*,dc,dd,eps_valid,v_elem`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let names = self.setup.charge_names();
        let mut header: Vec<String> = ["i", "mu", "m", "j", "nu", "n", "p_fwd", "p_rev"].map(String::from).to_vec();
        for prefix in ["da", "q", "eps", "w"] {
            header.extend(names.iter().map(|k| format!("{prefix}_{k}")));
        }
        header.extend(["dc", "dd", "eps_valid", "v_elem"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let t = r.trajectory;
            let mut row: Vec<String> = [t.i, t.mu, t.m, t.j, t.nu, t.n].iter().map(|x| x.to_string()).collect();
            row.push(sig17(r.p_forward));
            row.push(sig17(r.p_reverse));
            for v in [&r.delta_a, &r.q, &r.epsilon, &r.w] {
                row.extend(v.iter().map(|&x| sig17(x)));
            }
            row.push(sig17(r.delta_c));
            row.push(sig17(r.delta_d));
            row.push(r.epsilon_valid.to_string());
            row.push(sig17(r.v_element_magnitude));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `<j^tau, nu| U |i^0, mu>`.
fn forward_amplitude(setup: &JointSetup, g: &Trajectory) -> Complex64 {
    setup.propagator.matrix().matrix_element(&setup.final_ket(g.j, g.nu), &setup.initial_ket(g.i, g.mu))
}

/// `p^0(m|i) = |<m^{r,0}|i^0>|^2`.
fn initial_conditional(setup: &JointSetup, g: &Trajectory) -> f64 {
    overlap_sq(setup.reference_initial.eigenvector(g.m), setup.system_initial.eigenvector(g.i))
}

/// `p^tau(n|j) = |<n^{r,tau}|j^tau>|^2`.
fn final_conditional(setup: &JointSetup, g: &Trajectory) -> f64 {
    overlap_sq(setup.reference_final.eigenvector(g.n), setup.system_final.eigenvector(g.j))
}

/// `P(Gamma) = p^0_i p^R_mu p^0(m|i) |<j,nu|U|i,mu>|^2 p^tau(n|j)`.
pub fn forward_probability(setup: &JointSetup, g: &Trajectory) -> Result<f64> {
    setup.check(g)?;
    Ok(setup.system_initial.probabilities()[g.i]
        * setup.reservoir.probabilities()[g.mu]
        * initial_conditional(setup, g)
        * forward_amplitude(setup, g).norm_sqr()
        * final_conditional(setup, g))
}

/// `P^dag(Gamma^dag) = p^tau_j p^R_nu p^tau(n|j) |<i,mu|U^dag|j,nu>|^2 p^0(m|i)`.
pub fn reverse_probability(setup: &JointSetup, g: &Trajectory, index: ReverseIndex) -> Result<f64> {
    setup.check(g)?;
    let start = match index {
        ReverseIndex::Final => setup.system_final.probabilities()[g.j],
        ReverseIndex::Literal => setup.system_final.probabilities()[g.i],
    };
    let back = setup.propagator.adjoint();
    let amp = back.matrix().matrix_element(&setup.initial_ket(g.i, g.mu), &setup.final_ket(g.j, g.nu));
    Ok(start
        * setup.reservoir.probabilities()[g.nu]
        * final_conditional(setup, g)
        * amp.norm_sqr()
        * initial_conditional(setup, g))
}

/// Local charge change per charge.
pub fn charge_change(setup: &JointSetup, g: &Trajectory, basis: DeltaABasis) -> Result<Vec<f64>> {
    setup.check(g)?;
    let a0 = setup.system_initial.source().charges();
    let at = setup.system_final.source().charges();
    let (start, end) = match basis {
        DeltaABasis::Eigen => (setup.system_initial.eigenvector(g.i), setup.system_final.eigenvector(g.j)),
        DeltaABasis::Reference => (setup.reference_initial.eigenvector(g.m), setup.reference_final.eigenvector(g.n)),
    };
    Ok(at.iter().zip(a0).map(|(t, z)| t.expectation(end) - z.expectation(start)).collect())
}

/// `q_k = <mu|A^R_k|mu> - <nu|A^R_k|nu>`, positive when the reservoir gives up charge.
pub fn heat(setup: &JointSetup, g: &Trajectory) -> Result<Vec<f64>> {
    setup.check(g)?;
    let mu = setup.reservoir.eigenvector(g.mu);
    let nu = setup.reservoir.eigenvector(g.nu);
    Ok(setup.reservoir.source().charges().iter().map(|a| a.expectation(mu) - a.expectation(nu)).collect())
}

pub fn epsilon(setup: &JointSetup, g: &Trajectory, formula: EpsilonFormula) -> Result<EpsilonValue> {
    setup.check(g)?;
    let v = setup.protocol.interaction().matrix();
    let bra = setup.final_ket(g.j, g.nu);
    let ket = setup.initial_ket(g.i, g.mu);
    let v_el = v.matrix_element(&bra, &ket);
    let magnitude = v_el.norm();
    let n = setup.n_charges();
    if magnitude <= setup.tolerances.coupling_element * v.max_abs() || magnitude == 0.0 {
        return Ok(EpsilonValue {
            values: vec![f64::NAN; n],
            imag: vec![f64::NAN; n],
            valid: false,
            v_element_magnitude: magnitude,
        });
    }
    let a0 = setup.system_initial.source().charges();
    let at = setup.system_final.source().charges();
    let vi = setup.system_initial.eigenvector(g.i);
    let vj = setup.system_final.eigenvector(g.j);
    let mut values = Vec::with_capacity(n);
    let mut imag = Vec::with_capacity(n);
    for k in 0..n {
        let kernel = EpsilonKernel::build(setup, k, g, formula)?;
        let delta_a = at[k].matrix() - a0[k].matrix();
        let (da_j, da_i) = (delta_a.expectation(vj), delta_a.expectation(vi));
        let (ratio, shift) = match formula {
            EpsilonFormula::Corrected => {
                let num = (&(v * &kernel.o_0) - &(&kernel.o_tau * v)).matrix_element(&bra, &ket);
                (num / v_el, (da_j + da_i) / 2.0)
            }
            EpsilonFormula::Literal => {
                let num = (&(&kernel.o_tau * v) - &(v * &kernel.o_0)).matrix_element(&bra, &ket);
                (num / v_el, -(da_j - da_i) / 2.0)
            }
        };
        values.push(ratio.re + shift);
        imag.push(ratio.im);
    }
    Ok(EpsilonValue { values, imag, valid: true, v_element_magnitude: magnitude })
}

/// `w = Delta a - q - epsilon`; `None` when epsilon is undefined.
pub fn work_remainder(setup: &JointSetup, g: &Trajectory, options: &EnsembleOptions) -> Result<Option<Vec<f64>>> {
    let eps = epsilon(setup, g, options.epsilon_formula)?;
    if !eps.valid {
        return Ok(None);
    }
    let da = charge_change(setup, g, options.delta_a_basis)?;
    let q = heat(setup, g)?;
    Ok(Some(remainder(&da, &q, &eps.values)))
}

fn remainder(da: &[f64], q: &[f64], eps: &[f64]) -> Vec<f64> {
    da.iter().zip(q).zip(eps).map(|((a, q), e)| (a - q) - e).collect()
}

/// `(Delta c, Delta d)`; `None` when a probability in a logarithm is below the floor.
pub fn coherence_increments(setup: &JointSetup, g: &Trajectory) -> Result<Option<(f64, f64)>> {
    setup.check(g)?;
    let p0 = setup.system_initial.probabilities()[g.i];
    let pt = setup.system_final.probabilities()[g.j];
    let pd0 = setup.dephased_initial[g.m];
    let pdt = setup.dephased_final[g.n];
    let pr0 = setup.reference_initial.probabilities()[g.m];
    let prt = setup.reference_final.probabilities()[g.n];
    let floor = setup.tolerances.probability_floor;
    if [p0, pt, pd0, pdt, pr0, prt].iter().any(|&p| p < floor) {
        return Ok(None);
    }
    let dc = (pt / pdt).ln() - (p0 / pd0).ln();
    let dd = (pdt / prt).ln() - (pd0 / pr0).ln();
    Ok(Some((dc, dd)))
}

pub fn enumerate_ensemble(setup: &JointSetup) -> Result<PathEnsemble> {
    enumerate_ensemble_with(setup, EnsembleOptions::default())
}

/// Full lattice in `(i, mu, m, j, nu, n)` lexicographic order.
pub fn enumerate_ensemble_with(setup: &JointSetup, options: EnsembleOptions) -> Result<PathEnsemble> {
    let (ds, dr) = setup.dims();
    let mut records = Vec::with_capacity(setup.lattice_size());
    let mut excluded_mass = 0.0;
    let mut increment_excluded_mass = 0.0;

    // Quantities that do not depend on (m, n), keyed by (i, mu, j, nu).
    let mut inner = Vec::with_capacity(ds * dr * ds * dr);
    for i in 0..ds {
        for mu in 0..dr {
            for j in 0..ds {
                for nu in 0..dr {
                    let g = Trajectory { i, mu, m: 0, j, nu, n: 0 };
                    inner.push((epsilon(setup, &g, options.epsilon_formula)?, heat(setup, &g)?));
                }
            }
        }
    }

    for i in 0..ds {
        for mu in 0..dr {
            for m in 0..ds {
                for j in 0..ds {
                    for nu in 0..dr {
                        for n in 0..ds {
                            let g = Trajectory { i, mu, m, j, nu, n };
                            let (eps, q) = &inner[((i * dr + mu) * ds + j) * dr + nu];
                            let p_forward = forward_probability(setup, &g)?;
                            let p_reverse = reverse_probability(setup, &g, options.reverse_index)?;
                            let delta_a = charge_change(setup, &g, options.delta_a_basis)?;
                            let w = if eps.valid {
                                remainder(&delta_a, q, &eps.values)
                            } else {
                                excluded_mass += p_forward;
                                vec![f64::NAN; q.len()]
                            };
                            let incs = coherence_increments(setup, &g)?;
                            if incs.is_none() {
                                increment_excluded_mass += p_forward;
                            }
                            let (delta_c, delta_d) = incs.unwrap_or((f64::NAN, f64::NAN));
                            records.push(TrajectoryRecord {
                                trajectory: g,
                                p_forward,
                                p_reverse,
                                delta_a,
                                q: q.clone(),
                                epsilon: eps.values.clone(),
                                epsilon_imag: eps.imag.clone(),
                                epsilon_valid: eps.valid,
                                w,
                                delta_c,
                                delta_d,
                                increments_valid: incs.is_some(),
                                v_element_magnitude: eps.v_element_magnitude,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(PathEnsemble { records, excluded_mass, increment_excluded_mass, options, setup: setup.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::pauli_matrix;
    use crate::dynamics::{propagate, DrivenOperator, LinearRamp, PropagatorConfig, Schedule};
    use crate::testutil::{random_hermitian, rng};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn pauli(c: char) -> HermitianOperator {
        HermitianOperator::new(pauli_matrix(c), c.to_string()).unwrap()
    }

    fn exchange(j: f64) -> HermitianOperator {
        let mut v = ComplexMatrix::zeros(4);
        for c in ['X', 'Y', 'Z'] {
            v = &v + &tensor(&pauli_matrix(c), &pauli_matrix(c));
        }
        HermitianOperator::new(v.scale_real(j), "V").unwrap()
    }

    /// Two-qubit model with beta = 1, beta^R = 0.5, omega = 1, tau = pi.
    fn setup(theta: f64, g0: f64, g_tau: f64, coupling: f64) -> JointSetup {
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
            Protocol::new(PI, h, pauli('Z').scale(0.5), exchange(coupling), charges, vec![pauli('X'), pauli('Y'), pauli('Z')])
                .unwrap();
        let u = propagate(&protocol, &PropagatorConfig::default()).unwrap();
        let lambda = vec![theta.sin() / 2.0, 0.0, theta.cos() / 2.0];
        JointSetup::new(protocol, lambda, vec![0.0, 0.0, 0.25], u, Tolerances::default()).unwrap()
    }

    fn total(ens: &PathEnsemble, f: impl Fn(&TrajectoryRecord) -> f64) -> f64 {
        ens.records.iter().map(f).sum()
    }

    #[test]
    fn lattice_is_complete() {
        for theta in [0.0, 0.7, FRAC_PI_2, 2.4] {
            let ens = enumerate_ensemble(&setup(theta, 1.0, 1.0, 1.0)).unwrap();
            assert_eq!(ens.records.len(), 64);
            assert!((total(&ens, |r| r.p_forward) - 1.0).abs() < 1e-12);
            assert!((total(&ens, |r| r.p_reverse) - 1.0).abs() < 1e-12);
            assert!(ens.records.iter().all(|r| r.p_forward >= -1e-14 && r.p_reverse >= -1e-14));
        }
        let driven = enumerate_ensemble(&setup(0.7, 10.0, 0.1, 1.0)).unwrap();
        assert!((total(&driven, |r| r.p_forward) - 1.0).abs() < 1e-10);
        assert!((total(&driven, |r| r.p_reverse) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identity_evolution_keeps_outcomes() {
        // V = 0 and H = H^R = 0 gives U = 1; pi^0 = pi^tau since nothing is driven.
        let protocol = Protocol::new(
            1.0,
            DrivenOperator::constant(HermitianOperator::zero(2, "0")),
            HermitianOperator::zero(2, "0"),
            HermitianOperator::zero(4, "0"),
            vec![DrivenOperator::constant(pauli('Z'))],
            vec![pauli('Z')],
        )
        .unwrap();
        let s = JointSetup::new(protocol, vec![0.5], vec![0.25], UnitaryOperator::identity(4), Tolerances::default()).unwrap();
        for r in enumerate_ensemble(&s).unwrap().records {
            let t = r.trajectory;
            let amp = forward_amplitude(&s, &t).norm_sqr();
            let expected = if t.i == t.j && t.mu == t.nu { 1.0 } else { 0.0 };
            assert!((amp - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn commuting_case_collapses_to_two_point_lattice() {
        let s = setup(0.0, 1.0, 1.0, 1.0);
        for r in enumerate_ensemble(&s).unwrap().records {
            let t = r.trajectory;
            if t.m != t.i || t.n != t.j {
                assert!(r.p_forward < 1e-30 && r.p_reverse < 1e-30);
            }
            assert!((initial_conditional(&s, &t) - if t.m == t.i { 1.0 } else { 0.0 }).abs() < 1e-15);
        }
    }

    #[test]
    fn reverse_and_forward_transitions_agree() {
        let s = setup(1.1, 10.0, 0.1, 1.0);
        let back = s.propagator.adjoint();
        for r in enumerate_ensemble(&s).unwrap().records {
            let t = r.trajectory;
            let fwd = forward_amplitude(&s, &t).norm_sqr();
            let rev = back.matrix().matrix_element(&s.initial_ket(t.i, t.mu), &s.final_ket(t.j, t.nu)).norm_sqr();
            assert!((fwd - rev).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_exchange_has_no_entropy_production() {
        // lambda = lambda^R = 0 on both sides: every record has P = P^dag.
        let protocol = Protocol::new(
            PI,
            DrivenOperator::constant(pauli('Z').scale(0.5)),
            pauli('Z').scale(0.5),
            exchange(1.0),
            vec![DrivenOperator::constant(pauli('Z'))],
            vec![pauli('Z')],
        )
        .unwrap();
        let u = propagate(&protocol, &PropagatorConfig::default()).unwrap();
        let s = JointSetup::new(protocol, vec![0.3], vec![0.3], u, Tolerances::default()).unwrap();
        for r in enumerate_ensemble(&s).unwrap().records {
            assert!((r.p_forward - r.p_reverse).abs() < 1e-15);
        }
    }

    #[test]
    fn charge_change_and_heat_examples() {
        let s = setup(0.0, 1.0, 1.0, 1.0);
        // Ground of H(0) is |1>, index 0; excited is |0>.
        let g = Trajectory { i: 0, mu: 0, m: 0, j: 1, nu: 0, n: 1 };
        assert!((charge_change(&s, &g, DeltaABasis::Eigen).unwrap()[2] - 2.0).abs() < 1e-14);
        let same = Trajectory { j: 0, ..g };
        assert!(charge_change(&s, &same, DeltaABasis::Eigen).unwrap().iter().all(|x| x.abs() < 1e-14));

        // Reservoir ground is sigma_z = -1 (index 0); mu = +1 state, nu = -1 state.
        let h = Trajectory { mu: 1, nu: 0, ..g };
        let q = heat(&s, &h).unwrap();
        assert!((q[2] - 2.0).abs() < 1e-14);
        assert!(q[0].abs() < 1e-15 && q[1].abs() < 1e-15);
        assert!(heat(&s, &g).unwrap().iter().all(|x| x.abs() < 1e-15));

        let side = setup(FRAC_PI_2, 1.0, 1.0, 1.0);
        for i in 0..2 {
            for j in 0..2 {
                let g = Trajectory { i, j, ..g };
                assert!(charge_change(&side, &g, DeltaABasis::Eigen).unwrap()[2].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn epsilon_vanishes_for_commuting_charges() {
        for theta in [0.0, PI] {
            for r in enumerate_ensemble(&setup(theta, 1.0, 1.0, 1.0)).unwrap().records {
                if r.epsilon_valid {
                    assert!(r.epsilon.iter().all(|e| e.abs() < 1e-10), "{:?}", r.epsilon);
                }
            }
        }
    }

    #[test]
    fn first_law_identity_in_conserving_setup() {
        for theta in [0.3, FRAC_PI_2, 2.2] {
            let ens = enumerate_ensemble(&setup(theta, 1.0, 1.0, 1.0)).unwrap();
            let lambda = ens.setup.system_affinities().to_vec();
            let lambda_r = ens.setup.reservoir_affinities().to_vec();
            let gap = ens.setup.affinity_gap();
            for r in ens.records.iter().filter(|r| r.epsilon_valid) {
                for k in 0..3 {
                    assert!((r.delta_a[k] - r.q[k] - r.epsilon[k]).abs() < 1e-9);
                    assert!(r.w[k].abs() < 1e-9);
                    assert!(r.epsilon_imag[k].abs() < 1e-9);
                }
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                let lhs = dot(&lambda, &r.epsilon) + dot(&gap, &r.q);
                let rhs = dot(&lambda, &r.delta_a) - dot(&lambda_r, &r.q);
                assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn literal_epsilon_does_not_close_first_law() {
        let s = setup(FRAC_PI_2, 1.0, 1.0, 1.0);
        let opts = EnsembleOptions { epsilon_formula: EpsilonFormula::Literal, ..Default::default() };
        let ens = enumerate_ensemble_with(&s, opts).unwrap();
        let worst = ens
            .records
            .iter()
            .filter(|r| r.epsilon_valid)
            .flat_map(|r| (0..3).map(move |k| (r.delta_a[k] - r.q[k] - r.epsilon[k]).abs()))
            .fold(0.0, f64::max);
        assert!(worst > 1e-3);
    }

    /// Independent evaluation of the corrected kernel from explicit sums over outer products.
    fn epsilon_oracle(s: &JointSetup, g: &Trajectory, k: usize) -> f64 {
        let a0 = s.system_initial.source().charges()[k].matrix();
        let at = s.system_final.source().charges()[k].matrix();
        let ar = s.reservoir.source().charges()[k].matrix();
        let bra = s.final_ket(g.j, g.nu);
        let ket = s.initial_ket(g.i, g.mu);
        let v = s.protocol.interaction().matrix();
        let abar = (a0 + at).scale_real(0.5);
        // (1 - Pi_j) = sum_{j' != j} |j'><j'|, likewise for the others.
        let others = |st: &GibbsState, skip: usize| {
            let mut m = ComplexMatrix::zeros(st.dim());
            for k in (0..st.dim()).filter(|&k| k != skip) {
                m = &m + &st.spectrum().projector(k);
            }
            m
        };
        let o_tau = &tensor(&(&abar * &others(&s.system_final, g.j)), &ComplexMatrix::identity(2))
            + &tensor(&ComplexMatrix::identity(2), &(ar * &others(&s.reservoir, g.nu)));
        let o_0 = &tensor(&(&others(&s.system_initial, g.i) * &abar), &ComplexMatrix::identity(2))
            + &tensor(&ComplexMatrix::identity(2), &(&others(&s.reservoir, g.mu) * ar));
        let num = (v * &o_0).matrix_element(&bra, &ket) - (&o_tau * v).matrix_element(&bra, &ket);
        let den = v.matrix_element(&bra, &ket);
        let da = at - a0;
        let corr = (da.expectation(s.system_final.eigenvector(g.j)) + da.expectation(s.system_initial.eigenvector(g.i))) / 2.0;
        (num / den).re + corr
    }

    #[test]
    fn kernel_matches_independent_evaluation() {
        for (theta, g0, gt) in [(0.9, 1.0, 1.0), (2.0, 10.0, 0.1)] {
            let s = setup(theta, g0, gt, 1.0);
            for r in enumerate_ensemble(&s).unwrap().records.iter().filter(|r| r.epsilon_valid) {
                for k in 0..3 {
                    let oracle = epsilon_oracle(&s, &r.trajectory, k);
                    assert!((r.epsilon[k] - oracle).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_coupling_element_is_flagged() {
        // At theta = 0 the triplet/singlet structure leaves many <j,nu|V|i,mu> = 0.
        let s = setup(0.0, 1.0, 1.0, 1.0);
        let ens = enumerate_ensemble(&s).unwrap();
        let flagged: Vec<_> = ens.records.iter().filter(|r| !r.epsilon_valid).collect();
        assert!(!flagged.is_empty());
        for r in &flagged {
            assert!(r.v_element_magnitude <= 1e-12 * 2.0);
            assert!(r.w.iter().all(|x| x.is_nan()));
        }
        let mass: f64 = flagged.iter().map(|r| r.p_forward).sum();
        assert!((ens.excluded_mass - mass).abs() < 1e-15);
        let t = flagged[0].trajectory;
        assert!(work_remainder(&s, &t, &EnsembleOptions::default()).unwrap().is_none());
    }

    #[test]
    fn uncoupled_static_limit() {
        let s = setup(0.6, 1.0, 1.0, 0.0);
        let ens = enumerate_ensemble(&s).unwrap();
        for r in ens.records.iter().filter(|r| r.p_forward > 1e-15) {
            assert!(r.delta_a.iter().chain(&r.q).all(|x| x.abs() < 1e-12));
            assert!(r.w.iter().all(|x| x.is_nan() || x.abs() < 1e-12));
        }
    }

    #[test]
    fn increments_vanish_when_bases_coincide() {
        // lambda = lambda^R with commuting charges: p = p^d = p^r.
        let protocol = Protocol::new(
            PI,
            DrivenOperator::constant(pauli('Z').scale(0.5)),
            pauli('Z').scale(0.5),
            exchange(1.0),
            vec![DrivenOperator::constant(pauli('Z'))],
            vec![pauli('Z')],
        )
        .unwrap();
        let u = propagate(&protocol, &PropagatorConfig::default()).unwrap();
        let s = JointSetup::new(protocol, vec![0.4], vec![0.4], u, Tolerances::default()).unwrap();
        // Off-support records (m != i) compare different outcomes and carry no weight.
        for r in enumerate_ensemble(&s).unwrap().records.iter().filter(|r| r.p_forward > 0.0) {
            assert!(r.delta_c.abs() < 1e-14 && r.delta_d.abs() < 1e-14);
        }
    }

    #[test]
    fn exchange_increments_depend_only_on_endpoint_labels() {
        let s = setup(1.3, 1.0, 1.0, 1.0);
        let ens = enumerate_ensemble(&s).unwrap();
        for a in &ens.records {
            for b in &ens.records {
                let (ta, tb) = (a.trajectory, b.trajectory);
                if (ta.i, ta.j, ta.m, ta.n) == (tb.i, tb.j, tb.m, tb.n) {
                    assert_eq!(a.delta_c + a.delta_d, b.delta_c + b.delta_d);
                }
            }
        }
    }

    #[test]
    fn driven_increments_match_definition() {
        let s = setup(2.0, 10.0, 0.1, 1.0);
        let pi0 = s.system_initial.density();
        let pit = s.system_final.density();
        for r in enumerate_ensemble(&s).unwrap().records {
            let t = r.trajectory;
            let m_vec = s.reference_initial.eigenvector(t.m);
            let n_vec = s.reference_final.eigenvector(t.n);
            let pd0 = pi0.expectation(m_vec);
            let pdt = pit.expectation(n_vec);
            let p0 = s.system_initial.density().expectation(s.system_initial.eigenvector(t.i));
            let pt = s.system_final.density().expectation(s.system_final.eigenvector(t.j));
            let pr0 = s.reference_initial.density().expectation(m_vec);
            let prt = s.reference_final.density().expectation(n_vec);
            let dc = (pt / pdt).ln() - (p0 / pd0).ln();
            let dd = (pdt / prt).ln() - (pd0 / pr0).ln();
            assert!((r.delta_c - dc).abs() < 1e-12 && (r.delta_d - dd).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_basis_variant_uses_m_and_n() {
        let s = setup(1.0, 10.0, 0.1, 1.0);
        let g = Trajectory { i: 0, mu: 1, m: 1, j: 1, nu: 0, n: 0 };
        let da = charge_change(&s, &g, DeltaABasis::Reference).unwrap();
        let z = pauli('Z');
        let expected = 0.1 * z.expectation(s.reference_final.eigenvector(0)) - 10.0 * z.expectation(s.reference_initial.eigenvector(1));
        assert!((da[2] - expected).abs() < 1e-12);
    }

    #[test]
    fn literal_reverse_index_breaks_normalisation() {
        let s = setup(0.5, 10.0, 0.1, 1.0);
        let opts = EnsembleOptions { reverse_index: ReverseIndex::Literal, ..Default::default() };
        let ens = enumerate_ensemble_with(&s, opts).unwrap();
        assert!((total(&ens, |r| r.p_reverse) - 1.0).abs() > 1e-6);
    }

    #[test]
    fn csv_layout() {
        let s = setup(FRAC_PI_2, 1.0, 1.0, 1.0).with_charge_names(vec!["x".into(), "y".into(), "z".into()]).unwrap();
        let ens = enumerate_ensemble(&s).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "i,mu,m,j,nu,n,p_fwd,p_rev,da_x,da_y,da_z,q_x,q_y,q_z,eps_x,eps_y,eps_z,w_x,w_y,w_z,dc,dd,eps_valid,v_elem"
        );
        assert_eq!(lines.count(), 64);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn rotated_degenerate_bases_preserve_probabilities() {
        // Degenerate reservoir: zero affinity on a single charge makes rho^R maximally mixed.
        let mut r = rng(7);
        let a = random_hermitian(&mut r, 2, 1.0);
        let protocol = Protocol::new(
            1.0,
            DrivenOperator::constant(a.clone()),
            pauli('Z'),
            exchange(1.0),
            vec![DrivenOperator::constant(a)],
            vec![pauli('Z')],
        )
        .unwrap();
        let u = propagate(&protocol, &PropagatorConfig::default()).unwrap();
        let s = JointSetup::new(protocol, vec![0.7], vec![0.0], u, Tolerances::default()).unwrap();
        assert_eq!(s.max_degeneracy(), 2);
        let rotated = s.with_rotated_degenerate_bases(11).unwrap();
        assert!(rotated.reservoir().density().approx_eq(s.reservoir().density(), 1e-14));
        assert!(!rotated.reservoir().eigenvector(0).iter().zip(s.reservoir().eigenvector(0)).all(|(a, b)| (a - b).norm() < 1e-6));
        let ens = enumerate_ensemble(&rotated).unwrap();
        assert!((total(&ens, |r| r.p_forward) - 1.0).abs() < 1e-12);
    }
}
