//! Two-qubit Heisenberg exchange model: a spin with charges `(sx, sy, g(t) sz)`
//! coupled to a reservoir spin by `V = J (sx sx + sy sy + sz sz)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{pauli_matrix, tensor, ComplexMatrix, HermitianOperator};
use crate::dynamics::{propagate, DrivenOperator, LinearRamp, PropagatorConfig, Protocol, Schedule};
use crate::error::{Error, Result};
use crate::flucts::{best_work_variant, work_ft_variants, DiagnosticFlags, Mode, WorkVariant};
use crate::sweep::{run_sweep_with, theta_grid, SweepTable};
use crate::tolerances::Tolerances;
use crate::trajectories::JointSetup;

pub const CHARGE_NAMES: [&str; 3] = ["x", "y", "z"];
pub const DEFAULT_POINTS: usize = 65;

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergParams {
    pub J: f64,
    pub omega: f64,
    pub beta: f64,
    pub beta_R: f64,
    pub theta: f64,
    pub tau: f64,
    pub g0: f64,
    pub g_tau: f64,
    #[serde(flatten)]
    pub propagator: PropagatorConfig,
}

impl Default for HeisenbergParams {
    fn default() -> Self {
        Self {
            J: 1.0,
            omega: 1.0,
            beta: 1.0,
            beta_R: 0.5,
            theta: 0.0,
            tau: PI,
            g0: 1.0,
            g_tau: 1.0,
            propagator: PropagatorConfig::default(),
        }
    }
}

impl HeisenbergParams {
    /// Driven defaults: ramp from 10 to 0.1.
    pub fn driven() -> Self {
        Self { g0: 10.0, g_tau: 0.1, ..Self::default() }
    }

    pub fn at_theta(&self, theta: f64) -> Self {
        Self { theta, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.J, self.omega, self.beta, self.beta_R, self.theta, self.tau, self.g0, self.g_tau]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Invalid("Heisenberg parameters must be finite".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::Invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if self.beta <= 0.0 || self.beta_R <= 0.0 {
            return Err(Error::Invalid(format!(
                "inverse temperatures must be positive, got beta = {}, beta_R = {}",
                self.beta, self.beta_R
            )));
        }
        Ok(())
    }

    pub fn system_affinities(&self) -> Vec<f64> {
        let s = self.omega * self.beta / 2.0;
        vec![s * self.theta.sin(), 0.0, s * self.theta.cos()]
    }

    pub fn reservoir_affinities(&self) -> Vec<f64> {
        vec![0.0, 0.0, self.omega * self.beta_R / 2.0]
    }
}

fn pauli(c: char) -> HermitianOperator {
    HermitianOperator::new(pauli_matrix(c), format!("s{}", c.to_ascii_lowercase())).expect("Pauli matrices are Hermitian")
}

/// `J (sx sx + sy sy + sz sz)`.
pub fn exchange_coupling(j: f64) -> HermitianOperator {
    let mut v = ComplexMatrix::zeros(4);
    for c in ['X', 'Y', 'Z'] {
        v = &v + &tensor(&pauli_matrix(c), &pauli_matrix(c));
    }
    HermitianOperator::new(v.scale_real(j), "V").expect("exchange coupling is Hermitian")
}

fn build(p: &HeisenbergParams, ramp: Schedule) -> Result<JointSetup> {
    p.validate()?;
    let (c, s) = (p.theta.cos(), p.theta.sin());
    let h = DrivenOperator::new(
        vec![
            (ramp, pauli('Z').scale(p.omega * c / 2.0)),
            (Schedule::Constant(1.0), pauli('X').scale(p.omega * s / 2.0)),
        ],
        "H",
    )?;
    let charges = vec![
        DrivenOperator::constant(pauli('X')),
        DrivenOperator::constant(pauli('Y')),
        DrivenOperator::new(vec![(ramp, pauli('Z'))], "gsz")?,
    ];
    let protocol = Protocol::new(
        p.tau,
        h,
        pauli('Z').scale(p.omega / 2.0),
        exchange_coupling(p.J),
        charges,
        vec![pauli('X'), pauli('Y'), pauli('Z')],
    )?;
    let u = propagate(&protocol, &p.propagator)?;
    JointSetup::new(protocol, p.system_affinities(), p.reservoir_affinities(), u, Tolerances::default())?
        .with_charge_names(CHARGE_NAMES.map(String::from).to_vec())
}

/// Undriven model; `g0` and `g_tau` are ignored.
pub fn build_exchange_model(p: &HeisenbergParams) -> Result<JointSetup> {
    build(p, Schedule::Constant(1.0))
}

/// Model with `H(t) = omega (g(t) cos(theta) sz + sin(theta) sx) / 2` and `A_z(t) = g(t) sz`.
pub fn build_driven_model(p: &HeisenbergParams) -> Result<JointSetup> {
    build(p, Schedule::Linear(LinearRamp::new(p.g0, p.g_tau, p.tau)?))
}

pub fn build_model(mode: Mode, p: &HeisenbergParams) -> Result<JointSetup> {
    match mode {
        Mode::Exchange => build_exchange_model(p),
        Mode::Work => build_driven_model(p),
    }
}

pub fn default_grid() -> Vec<f64> {
    theta_grid(0.0, PI, DEFAULT_POINTS)
}

/// Sweep of the Heisenberg model over `grid`.
pub fn run_sweep(mode: Mode, grid: &[f64], p: &HeisenbergParams, flags: DiagnosticFlags) -> SweepTable {
    let names = CHARGE_NAMES.map(String::from).to_vec();
    run_sweep_with(mode, grid, names, flags, |theta| build_model(mode, &p.at_theta(theta)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub theta: f64,
    pub variants: Vec<WorkVariant>,
    /// Index into `variants` of the estimate closest to one.
    pub best: usize,
}

/// Work-relation readings across the grid on the driven model.
pub fn run_variant_sweep(grid: &[f64], p: &HeisenbergParams) -> Result<Vec<VariantRow>> {
    grid.par_iter()
        .map(|&theta| {
            let variants = work_ft_variants(&build_driven_model(&p.at_theta(theta))?)?;
            let best = best_work_variant(&variants)
                .and_then(|b| variants.iter().position(|v| v == b))
                .unwrap_or(0);
            Ok(VariantRow { theta, variants, best })
        })
        .collect()
}
