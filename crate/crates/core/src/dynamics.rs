//! Protocols and time-ordered joint propagators.
//!
//! The joint generator is `G(t) = H(t) (x) 1 + 1 (x) H^R + V`, evolved with
//! the midpoint product `U = prod_k exp(-i G(t_k + dt/2) dt)`, latest slice
//! leftmost.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{commutator, expm_hermitian_with, ComplexMatrix, HermitianOperator, UnitaryOperator};
use crate::error::{Error, Result};
use crate::tolerances::Tolerances;

/// `g(t) = g0 (1 - t/tau) + g_tau t/tau` on `[0, tau]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRamp {
    pub g0: f64,
    pub g_tau: f64,
    pub duration: f64,
}

impl LinearRamp {
    pub fn new(g0: f64, g_tau: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Invalid(format!("ramp duration must be positive, got {duration}")));
        }
        Ok(Self { g0, g_tau, duration })
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(Error::TimeOutOfRange { t, duration: self.duration });
        }
        let s = t / self.duration;
        Ok(self.g0 * (1.0 - s) + self.g_tau * s)
    }

    pub fn is_constant(&self) -> bool {
        self.g0 == self.g_tau
    }
}

pub fn linear_ramp(g0: f64, g_tau: f64, duration: f64) -> Result<LinearRamp> {
    LinearRamp::new(g0, g_tau, duration)
}

/// Scalar gain multiplying an operator term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Constant(f64),
    Linear(LinearRamp),
}

impl Schedule {
    pub fn value(&self, t: f64) -> Result<f64> {
        match self {
            Schedule::Constant(c) => Ok(*c),
            Schedule::Linear(r) => r.value(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Schedule::Constant(_) => true,
            Schedule::Linear(r) => r.is_constant(),
        }
    }
}

/// `sum_j g_j(t) B_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivenOperator {
    terms: Vec<(Schedule, HermitianOperator)>,
    label: String,
}

impl DrivenOperator {
    pub fn new(terms: Vec<(Schedule, HermitianOperator)>, label: impl Into<String>) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::Invalid("driven operator has no terms".into()))?;
        let dim = first.1.dim();
        if let Some((_, bad)) = terms.iter().find(|(_, op)| op.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: bad.dim() });
        }
        Ok(Self { terms, label: label.into() })
    }

    pub fn constant(op: HermitianOperator) -> Self {
        let label = op.label().to_string();
        Self { terms: vec![(Schedule::Constant(1.0), op)], label }
    }

    pub fn terms(&self) -> &[(Schedule, HermitianOperator)] {
        &self.terms
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }

    pub fn is_static(&self) -> bool {
        self.terms.iter().all(|(s, _)| s.is_constant())
    }

    pub fn at(&self, t: f64) -> Result<HermitianOperator> {
        let mut coeffs = Vec::with_capacity(self.terms.len());
        for (s, _) in &self.terms {
            coeffs.push(s.value(t)?);
        }
        let ops: Vec<HermitianOperator> = self.terms.iter().map(|(_, op)| op.clone()).collect();
        HermitianOperator::linear_combination(&coeffs, &ops, format!("{}(t={t})", self.label))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    duration: f64,
    system_generator: DrivenOperator,
    reservoir_generator: HermitianOperator,
    interaction: HermitianOperator,
    system_charges: Vec<DrivenOperator>,
    reservoir_charges: Vec<HermitianOperator>,
}

impl Protocol {
    pub fn new(
        duration: f64,
        system_generator: DrivenOperator,
        reservoir_generator: HermitianOperator,
        interaction: HermitianOperator,
        system_charges: Vec<DrivenOperator>,
        reservoir_charges: Vec<HermitianOperator>,
    ) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Invalid(format!("duration must be positive, got {duration}")));
        }
        let (ds, dr) = (system_generator.dim(), reservoir_generator.dim());
        if interaction.dim() != ds * dr {
            return Err(Error::DimensionMismatch { expected: ds * dr, found: interaction.dim() });
        }
        if system_charges.len() != reservoir_charges.len() {
            return Err(Error::DimensionMismatch { expected: system_charges.len(), found: reservoir_charges.len() });
        }
        if let Some(c) = system_charges.iter().find(|c| c.dim() != ds) {
            return Err(Error::DimensionMismatch { expected: ds, found: c.dim() });
        }
        if let Some(c) = reservoir_charges.iter().find(|c| c.dim() != dr) {
            return Err(Error::DimensionMismatch { expected: dr, found: c.dim() });
        }
        let p = Self { duration, system_generator, reservoir_generator, interaction, system_charges, reservoir_charges };
        for t in [0.0, duration] {
            p.system_generator.at(t)?;
            for c in &p.system_charges {
                c.at(t)?;
            }
        }
        Ok(p)
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn system_dim(&self) -> usize {
        self.system_generator.dim()
    }

    pub fn reservoir_dim(&self) -> usize {
        self.reservoir_generator.dim()
    }

    pub fn system_generator(&self) -> &DrivenOperator {
        &self.system_generator
    }

    pub fn reservoir_generator(&self) -> &HermitianOperator {
        &self.reservoir_generator
    }

    pub fn interaction(&self) -> &HermitianOperator {
        &self.interaction
    }

    pub fn system_charges(&self) -> &[DrivenOperator] {
        &self.system_charges
    }

    pub fn reservoir_charges(&self) -> &[HermitianOperator] {
        &self.reservoir_charges
    }

    pub fn system_charges_at(&self, t: f64) -> Result<Vec<HermitianOperator>> {
        self.system_charges.iter().map(|c| c.at(t)).collect()
    }

    /// True when neither the generator nor any charge changes in time.
    pub fn is_undriven(&self) -> bool {
        self.system_generator.is_static() && self.system_charges.iter().all(DrivenOperator::is_static)
    }

    pub fn generator(&self, t: f64) -> Result<HermitianOperator> {
        JointGenerator::new(self).at(t)
    }
}

/// `G(t)` split into a static part and scheduled system terms lifted to the joint space.
struct JointGenerator {
    fixed: ComplexMatrix,
    driven: Vec<(Schedule, ComplexMatrix)>,
}

impl JointGenerator {
    fn new(p: &Protocol) -> Self {
        let (ds, dr) = (p.system_dim(), p.reservoir_dim());
        let mut fixed = &p.reservoir_generator.embed_right(ds).into_matrix() + p.interaction.matrix();
        let mut driven = Vec::new();
        for (s, op) in p.system_generator.terms() {
            let lifted = op.embed_left(dr).into_matrix();
            match s {
                Schedule::Constant(c) => fixed = &fixed + &lifted.scale_real(*c),
                Schedule::Linear(r) if r.is_constant() => fixed = &fixed + &lifted.scale_real(r.g0),
                _ => driven.push((*s, lifted)),
            }
        }
        Self { fixed, driven }
    }

    fn is_static(&self) -> bool {
        self.driven.is_empty()
    }

    fn matrix_at(&self, t: f64) -> Result<ComplexMatrix> {
        let mut m = self.fixed.clone();
        for (s, op) in &self.driven {
            m = &m + &op.scale_real(s.value(t)?);
        }
        Ok(m)
    }

    fn at(&self, t: f64) -> Result<HermitianOperator> {
        HermitianOperator::new(self.matrix_at(t)?, "G(t)")
    }
}

/// `exp(sign * i * G * dt)` for one slice.
///
/// Short slices use a Taylor series truncated once terms fall below 1e-18 in
/// the induced 1-norm; longer ones go through the spectral decomposition.
fn slice_exponential(g: &ComplexMatrix, sign: f64, dt: f64, tol: &Tolerances) -> Result<ComplexMatrix> {
    let a = g.scale(Complex64::new(0.0, sign * dt));
    let norm = one_norm(&a);
    if norm > TAYLOR_NORM_LIMIT {
        let h = HermitianOperator::with_tolerance(g.clone(), "G(t)", tol.hermitian)?;
        return expm_hermitian_with(&h, Complex64::new(0.0, sign * dt), tol);
    }
    let mut sum = ComplexMatrix::identity(g.dim());
    let mut term = sum.clone();
    for k in 1..=MAX_TAYLOR_ORDER {
        term = term.matmul(&a)?.scale_real(1.0 / k as f64);
        sum = &sum + &term;
        if one_norm(&term) < 1e-18 {
            break;
        }
    }
    Ok(sum)
}

const TAYLOR_NORM_LIMIT: f64 = 0.1;
const MAX_TAYLOR_ORDER: usize = 30;

fn one_norm(m: &ComplexMatrix) -> f64 {
    let n = m.dim();
    (0..n).map(|c| (0..n).map(|r| m[(r, c)].norm()).sum::<f64>()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagatorConfig {
    pub slices: usize,
    pub target_error: f64,
    pub max_slices: usize,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self { slices: 2048, target_error: 1e-9, max_slices: 1 << 20 }
    }
}

/// Propagator together with the slice count that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub unitary: UnitaryOperator,
    /// 0 for a time-independent generator (single exact exponential).
    pub slices: usize,
    /// Max-norm difference to the previous halving level; 0 when exact.
    pub error_estimate: f64,
}

pub fn propagate(p: &Protocol, cfg: &PropagatorConfig) -> Result<UnitaryOperator> {
    Ok(propagate_report(p, cfg)?.unitary)
}

pub fn propagate_report(p: &Protocol, cfg: &PropagatorConfig) -> Result<Propagation> {
    propagate_interval(p, 0.0, p.duration, cfg)
}

/// Adaptive propagator from `t0` to `t1`.
pub fn propagate_interval(p: &Protocol, t0: f64, t1: f64, cfg: &PropagatorConfig) -> Result<Propagation> {
    check_config(cfg)?;
    let gen = JointGenerator::new(p);
    let tol = Tolerances::default();
    if gen.is_static() {
        let unitary = exact_step(&gen, t0, t1 - t0, &tol)?;
        return Ok(Propagation { unitary, slices: 0, error_estimate: 0.0 });
    }
    let mut n = cfg.slices;
    let mut previous = midpoint_product(&gen, t0, t1, n, false, &tol)?;
    loop {
        let doubled = n.checked_mul(2).filter(|&d| d <= cfg.max_slices);
        let Some(next_n) = doubled else {
            let last_error = if n == cfg.slices { f64::INFINITY } else { f64::NAN };
            return Err(Error::PropagatorNonConvergence { slices: n, last_error });
        };
        let next = midpoint_product(&gen, t0, t1, next_n, false, &tol)?;
        let err = next.matrix().max_abs_diff(previous.matrix());
        if err < cfg.target_error {
            return Ok(Propagation { unitary: next, slices: next_n, error_estimate: err });
        }
        if next_n * 2 > cfg.max_slices {
            return Err(Error::PropagatorNonConvergence { slices: next_n, last_error: err });
        }
        n = next_n;
        previous = next;
    }
}

/// Midpoint product with exactly `slices` steps; exact exponential when undriven.
pub fn propagate_fixed(p: &Protocol, slices: usize) -> Result<UnitaryOperator> {
    if slices == 0 {
        return Err(Error::Invalid("slice count must be at least 1".into()));
    }
    let gen = JointGenerator::new(p);
    let tol = Tolerances::default();
    if gen.is_static() {
        return exact_step(&gen, 0.0, p.duration, &tol);
    }
    midpoint_product(&gen, 0.0, p.duration, slices, false, &tol)
}

/// Backward evolution: ordered product of `exp(+i G(tau - s) ds)`, which inverts the forward propagator.
pub fn reverse_propagate(p: &Protocol, cfg: &PropagatorConfig) -> Result<UnitaryOperator> {
    check_config(cfg)?;
    let gen = JointGenerator::new(p);
    let tol = Tolerances::default();
    if gen.is_static() {
        return Ok(exact_step(&gen, 0.0, p.duration, &tol)?.adjoint());
    }
    let mut n = cfg.slices;
    let mut previous = midpoint_product(&gen, 0.0, p.duration, n, true, &tol)?;
    while n * 2 <= cfg.max_slices {
        n *= 2;
        let next = midpoint_product(&gen, 0.0, p.duration, n, true, &tol)?;
        let err = next.matrix().max_abs_diff(previous.matrix());
        if err < cfg.target_error {
            return Ok(next);
        }
        previous = next;
    }
    Err(Error::PropagatorNonConvergence { slices: n, last_error: f64::NAN })
}

fn check_config(cfg: &PropagatorConfig) -> Result<()> {
    if cfg.slices == 0 || cfg.max_slices < cfg.slices || !(cfg.target_error > 0.0) {
        return Err(Error::Invalid(format!("bad propagator config {cfg:?}")));
    }
    Ok(())
}

fn exact_step(gen: &JointGenerator, t: f64, dt: f64, tol: &Tolerances) -> Result<UnitaryOperator> {
    let g = gen.at(t)?;
    let m = expm_hermitian_with(&g, Complex64::new(0.0, -dt), tol)?;
    UnitaryOperator::with_tolerance(m, tol.unitary)
}

fn midpoint_product(
    gen: &JointGenerator,
    t0: f64,
    t1: f64,
    slices: usize,
    backward: bool,
    tol: &Tolerances,
) -> Result<UnitaryOperator> {
    let dt = (t1 - t0) / slices as f64;
    let sign = if backward { 1.0 } else { -1.0 };
    let mut u = ComplexMatrix::identity(gen.fixed.dim());
    for k in 0..slices {
        // Backward runs the mirrored schedule: s = t0 + (k + 1/2) dt maps to t1 - s + t0.
        let mid = t0 + (k as f64 + 0.5) * dt;
        let t = if backward { t1 + t0 - mid } else { mid };
        let step = slice_exponential(&gen.matrix_at(t)?, sign, dt, tol)?;
        u = step.matmul(&u)?;
    }
    UnitaryOperator::with_tolerance(u, tol.unitary)
}

/// `|[V, A_k(t) (x) 1 + 1 (x) A^R_k]|_max`, indexed `[charge][sample]`.
pub fn conservation_residual(p: &Protocol, t_samples: &[f64]) -> Result<Vec<Vec<f64>>> {
    let (ds, dr) = (p.system_dim(), p.reservoir_dim());
    let mut table = Vec::with_capacity(p.system_charges.len());
    for (sys, res) in p.system_charges.iter().zip(&p.reservoir_charges) {
        let res_joint = res.embed_right(ds);
        let mut row = Vec::with_capacity(t_samples.len());
        for &t in t_samples {
            let total = sys.at(t)?.embed_left(dr).add(&res_joint)?;
            row.push(commutator(&p.interaction, &total)?.max_abs());
        }
        table.push(row);
    }
    Ok(table)
}
