//! Run configuration: a versioned JSON document naming the model, the angle grid,
//! propagator settings, output paths and diagnostic switches.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use nonabelian_core::dynamics::{propagate, DrivenOperator, PropagatorConfig, Protocol};
use nonabelian_core::flucts::{DiagnosticFlags, Mode};
use nonabelian_core::format::sig17;
use nonabelian_core::heisenberg::{build_model, HeisenbergParams, CHARGE_NAMES};
use nonabelian_core::sweep::theta_grid;
use nonabelian_core::{expr_to_matrix, parse_pauli_expr, HermitianOperator, JointSetup, Tolerances};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Exchange,
    Work,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Heisenberg(HeisenbergParams),
    Custom(CustomModel),
}

/// Affinity given as a number or as a product such as `"0.5*{sin_theta}"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Affinity {
    Value(f64),
    Expr(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeSpec {
    pub name: String,
    pub system: String,
    pub reservoir: String,
}

/// Undriven model from Pauli expressions. `interaction` acts on the system sites
/// followed by the reservoir sites. Expressions may contain `{theta}`,
/// `{cos_theta}` and `{sin_theta}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomModel {
    pub system_sites: usize,
    pub reservoir_sites: usize,
    pub duration: f64,
    pub system_generator: String,
    pub reservoir_generator: String,
    pub interaction: String,
    pub charges: Vec<ChargeSpec>,
    pub system_affinities: Vec<Affinity>,
    pub reservoir_affinities: Vec<Affinity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { min: 0.0, max: std::f64::consts::PI, points: 65 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Outputs {
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Switch {
    LiteralEq5,
    ForceEpsilonZero,
    MnBasisVariant,
    LiteralEpsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub mode: RunMode,
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridSpec,
    /// Overrides the model's own propagator settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagator: Option<PropagatorConfig>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub diagnostics: Vec<Switch>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Schema checks plus a trial build at the first grid point.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            self.schema_version
        );
        match (&self.model, self.mode) {
            (ModelSpec::Heisenberg(_), RunMode::Custom) => bail!("mode `custom` requires a custom model"),
            (ModelSpec::Custom(_), RunMode::Exchange | RunMode::Work) => {
                bail!("custom models run in mode `custom`")
            }
            _ => {}
        }
        let g = self.grid;
        ensure!(g.min.is_finite() && g.max.is_finite() && g.points > 0, "grid needs finite bounds and points > 0");
        if let ModelSpec::Custom(m) = &self.model {
            m.check_shape()?;
        }
        self.build_setup(g.min)?;
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        theta_grid(self.grid.min, self.grid.max, self.grid.points)
    }

    pub fn flags(&self) -> DiagnosticFlags {
        let on = |s| self.diagnostics.contains(&s);
        DiagnosticFlags {
            literal_eq5: on(Switch::LiteralEq5),
            force_epsilon_zero: on(Switch::ForceEpsilonZero),
            mn_basis_variant: on(Switch::MnBasisVariant),
            literal_epsilon: on(Switch::LiteralEpsilon),
        }
    }

    /// Estimator family: custom models are undriven and use the exchange estimators.
    pub fn sweep_mode(&self) -> Mode {
        match self.mode {
            RunMode::Work => Mode::Work,
            RunMode::Exchange | RunMode::Custom => Mode::Exchange,
        }
    }

    pub fn charge_names(&self) -> Vec<String> {
        match &self.model {
            ModelSpec::Heisenberg(_) => CHARGE_NAMES.map(String::from).to_vec(),
            ModelSpec::Custom(m) => m.charges.iter().map(|c| c.name.clone()).collect(),
        }
    }

    pub fn propagator(&self) -> PropagatorConfig {
        match (&self.propagator, &self.model) {
            (Some(p), _) => *p,
            (None, ModelSpec::Heisenberg(h)) => h.propagator,
            (None, ModelSpec::Custom(_)) => PropagatorConfig::default(),
        }
    }

    pub fn set_slices(&mut self, slices: usize) {
        let mut p = self.propagator();
        p.slices = slices;
        p.max_slices = p.max_slices.max(slices);
        self.propagator = Some(p);
    }

    pub fn build_setup(&self, theta: f64) -> nonabelian_core::Result<JointSetup> {
        let propagator = self.propagator();
        match &self.model {
            ModelSpec::Heisenberg(h) => {
                let p = HeisenbergParams { propagator, ..h.at_theta(theta) };
                build_model(self.sweep_mode(), &p)
            }
            ModelSpec::Custom(m) => m.build(theta, &propagator),
        }
    }
}

fn substitute(text: &str, theta: f64) -> String {
    text.replace("{theta}", &sig17(theta))
        .replace("{cos_theta}", &sig17(theta.cos()))
        .replace("{sin_theta}", &sig17(theta.sin()))
}

impl Affinity {
    pub fn evaluate(&self, theta: f64) -> nonabelian_core::Result<f64> {
        let text = match self {
            Affinity::Value(v) => return Ok(*v),
            Affinity::Expr(s) => substitute(s, theta),
        };
        text.split('*')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| nonabelian_core::Error::Invalid(format!("bad affinity factor `{}` in `{text}`", f.trim())))
            })
            .product()
    }
}

impl CustomModel {
    fn check_shape(&self) -> Result<()> {
        ensure!(self.system_sites > 0 && self.reservoir_sites > 0, "site counts must be positive");
        ensure!(!self.charges.is_empty(), "at least one charge is required");
        ensure!(
            self.system_affinities.len() == self.charges.len() && self.reservoir_affinities.len() == self.charges.len(),
            "expected {} affinities per side, got {} and {}",
            self.charges.len(),
            self.system_affinities.len(),
            self.reservoir_affinities.len()
        );
        Ok(())
    }

    fn operator(&self, text: &str, sites: usize, theta: f64, what: &str) -> nonabelian_core::Result<HermitianOperator> {
        let expr = parse_pauli_expr(&substitute(text, theta), sites)
            .map_err(|e| nonabelian_core::Error::Invalid(format!("{what}: {e}")))?;
        Ok(expr_to_matrix(&expr)?.relabel(what))
    }

    pub fn build(&self, theta: f64, propagator: &PropagatorConfig) -> nonabelian_core::Result<JointSetup> {
        let (ns, nr) = (self.system_sites, self.reservoir_sites);
        let h = self.operator(&self.system_generator, ns, theta, "system_generator")?;
        let hr = self.operator(&self.reservoir_generator, nr, theta, "reservoir_generator")?;
        let v = self.operator(&self.interaction, ns + nr, theta, "interaction")?;
        let mut a = Vec::with_capacity(self.charges.len());
        let mut ar = Vec::with_capacity(self.charges.len());
        for c in &self.charges {
            a.push(DrivenOperator::constant(self.operator(&c.system, ns, theta, &c.name)?));
            ar.push(self.operator(&c.reservoir, nr, theta, &c.name)?);
        }
        let eval = |xs: &[Affinity]| xs.iter().map(|x| x.evaluate(theta)).collect::<nonabelian_core::Result<Vec<_>>>();
        let protocol = Protocol::new(self.duration, DrivenOperator::constant(h), hr, v, a, ar)?;
        let u = propagate(&protocol, propagator)?;
        JointSetup::new(protocol, eval(&self.system_affinities)?, eval(&self.reservoir_affinities)?, u, Tolerances::default())?
            .with_charge_names(self.charges.iter().map(|c| c.name.clone()).collect())
    }
}
