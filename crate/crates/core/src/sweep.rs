//! Parallel parameter sweeps and their CSV table.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::Result;
use crate::flucts::{ft_report, DiagnosticFlags, FTReport, Mode};
use crate::format::sig17;
use crate::trajectories::{enumerate_ensemble_with, JointSetup};

/// `points` uniform values on `[min, max]`.
pub fn theta_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..points).map(|k| min + (max - min) * k as f64 / (points - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    /// System affinities at this point; empty if the model failed to build.
    pub lambda: Vec<f64>,
    pub outcome: std::result::Result<FTReport, String>,
}

impl SweepRow {
    /// `lambda . (W + E)`, with the identity-substituted `E` for undriven rows.
    pub fn lambda_work(&self) -> Option<f64> {
        let r = self.outcome.as_ref().ok()?;
        let v = r.averages.E_identity.as_ref().unwrap_or(&r.averages.W_plus_E);
        Some(self.lambda.iter().zip(v).map(|(a, b)| a * b).sum())
    }

    pub fn report(&self) -> Option<&FTReport> {
        self.outcome.as_ref().ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub mode: Mode,
    pub charge_names: Vec<String>,
    pub flags: DiagnosticFlags,
    pub rows: Vec<SweepRow>,
}

/// Evaluates `build(theta)` at every grid point in parallel; rows come back in grid order.
pub fn run_sweep_with<F>(
    mode: Mode,
    grid: &[f64],
    charge_names: Vec<String>,
    flags: DiagnosticFlags,
    build: F,
) -> SweepTable
where
    F: Fn(f64) -> Result<JointSetup> + Sync,
{
    let rows = grid
        .par_iter()
        .map(|&theta| match build(theta) {
            Ok(setup) => SweepRow {
                theta,
                lambda: setup.system_affinities().to_vec(),
                outcome: evaluate(&setup, flags).map_err(|e| e.to_string()),
            },
            Err(e) => SweepRow { theta, lambda: Vec::new(), outcome: Err(e.to_string()) },
        })
        .collect();
    SweepTable { mode, charge_names, flags, rows }
}

pub fn evaluate(setup: &JointSetup, flags: DiagnosticFlags) -> Result<FTReport> {
    ft_report(&enumerate_ensemble_with(setup, flags.ensemble_options())?, flags)
}

fn csv_safe(msg: &str) -> String {
    msg.replace([',', '\n', '\r'], ";")
}

impl SweepTable {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["theta".to_string()];
        let per_charge = |h: &mut Vec<String>, prefix: &str| {
            h.extend(self.charge_names.iter().map(|k| format!("{prefix}_{k}")));
        };
        per_charge(&mut h, "E");
        per_charge(&mut h, "Q");
        if self.mode == Mode::Work {
            per_charge(&mut h, "W");
        }
        h.extend(["lambda_W_plus_E", "Sigma"].map(String::from));
        per_charge(&mut h, "Sigma");
        h.extend(
            ["ft_exchange", "ft_work", "ft_normalization", "max_detailed_residual", "excluded_mass", "status"]
                .map(String::from),
        );
        h
    }

    fn row_values(&self, row: &SweepRow) -> Vec<String> {
        let mut v = vec![sig17(row.theta)];
        let r = match &row.outcome {
            Ok(r) => r,
            Err(msg) => {
                v.extend(std::iter::repeat(sig17(f64::NAN)).take(self.header().len() - 2));
                v.push(format!("error: {}", csv_safe(msg)));
                return v;
            }
        };
        let e = match (self.mode, &r.averages.E_identity) {
            (Mode::Exchange, Some(e)) => e,
            _ => &r.averages.E,
        };
        let mut push_all = |xs: &[f64]| v.extend(xs.iter().map(|&x| sig17(x)));
        push_all(e);
        push_all(&r.averages.Q);
        if self.mode == Mode::Work {
            push_all(&r.averages.W);
        }
        push_all(&[row.lambda_work().unwrap_or(f64::NAN), r.sigma]);
        push_all(&r.sigma_per_charge);
        push_all(&[
            r.ft_exchange.unwrap_or(f64::NAN),
            r.ft_work,
            r.ft_normalization,
            r.max_detailed_residual,
            r.excluded_mass,
        ]);
        v.push(if r.approximate { "approximate" } else { "ok" }.to_string());
        v
    }

    /// Header plus one LF-terminated line per row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", self.header().join(","))?;
        for row in &self.rows {
            writeln!(out, "{}", self.row_values(row).join(","))?;
        }
        Ok(())
    }

    /// Largest `|ft - 1|` over successful rows, using the exchange estimator where defined.
    pub fn max_ft_deviation(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(SweepRow::report)
            .map(|r| (r.ft_exchange.unwrap_or(r.ft_work) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_sigma(&self) -> f64 {
        self.rows.iter().filter_map(SweepRow::report).map(|r| r.sigma).fold(f64::INFINITY, f64::min)
    }
}
