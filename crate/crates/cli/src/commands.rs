use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use nonabelian_core::dynamics::conservation_residual;
use nonabelian_core::flucts::{ft_report, FTReport};
use nonabelian_core::sweep::run_sweep_with;
use nonabelian_core::trajectories::enumerate_ensemble_with;

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_FAILED: u8 = 2;

/// Writes to `path`, or to standard output when `None`.
fn with_output<F>(path: Option<&Path>, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush()).with_context(|| format!("cannot write {}", p.display()))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock).context("cannot write to standard output")
        }
    }
}

pub fn sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<u8> {
    let table = run_sweep_with(cfg.sweep_mode(), &cfg.grid(), cfg.charge_names(), cfg.flags(), |theta| {
        cfg.build_setup(theta)
    });
    with_output(out.or(cfg.outputs.csv.as_deref()), |w| table.write_csv(w))?;
    let failed = table.failed_rows();
    println!(
        "{} rows, {} failed, max|ft-1| = {:.3e}, min Sigma = {:.3e}",
        table.rows.len(),
        failed,
        table.max_ft_deviation(),
        table.min_sigma()
    );
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILED })
}

pub fn trajectories(cfg: &RunConfig, theta: f64, out: Option<&Path>) -> Result<u8> {
    let setup = cfg.build_setup(theta)?;
    let ens = enumerate_ensemble_with(&setup, cfg.flags().ensemble_options())?;
    with_output(out.or(cfg.outputs.csv.as_deref()), |w| ens.write_csv(w))?;
    let invalid = ens.records.iter().filter(|r| !r.epsilon_valid).count();
    println!("{} records at theta = {theta}, {invalid} with undefined epsilon", ens.records.len());
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    /// Hard checks decide the exit code; the rest are informational.
    pub hard: bool,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &'static str, hard: bool, value: f64, tolerance: f64) -> Self {
        Self { name, hard, value, tolerance, passed: value <= tolerance }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub theta: f64,
    pub report: FTReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub config: RunConfig,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub points: Vec<PointReport>,
}

#[derive(Default)]
struct Worst {
    forward_norm: f64,
    reverse_norm: f64,
    closure: f64,
    exchange_ft: f64,
    work_ft: f64,
    residual: f64,
    conservation: f64,
    neg_sigma: f64,
    excluded: f64,
}

pub fn verify_report(cfg: &RunConfig) -> Result<VerifyReport> {
    let flags = cfg.flags();
    let mut worst = Worst::default();
    let mut points = Vec::new();
    let mut undriven = true;
    for theta in cfg.grid() {
        let setup = cfg.build_setup(theta).with_context(|| format!("theta = {theta}"))?;
        undriven &= setup.is_undriven();
        let ens = enumerate_ensemble_with(&setup, flags.ensemble_options())?;
        let report = ft_report(&ens, flags)?;
        let p_fwd: f64 = ens.records.iter().map(|r| r.p_forward).sum();
        let p_rev: f64 = ens.records.iter().map(|r| r.p_reverse).sum();
        worst.forward_norm = worst.forward_norm.max((p_fwd - 1.0).abs());
        worst.reverse_norm = worst.reverse_norm.max((p_rev - 1.0).abs());
        if setup.is_undriven() {
            let closure = ens
                .records
                .iter()
                .filter(|r| r.epsilon_valid)
                .flat_map(|r| (0..r.q.len()).map(move |k| (r.delta_a[k] - r.q[k] - r.epsilon[k]).abs()))
                .fold(0.0, f64::max);
            worst.closure = worst.closure.max(closure);
        }
        if let Some(ft) = report.ft_exchange {
            worst.exchange_ft = worst.exchange_ft.max((ft - 1.0).abs());
        }
        worst.work_ft = worst.work_ft.max((report.ft_work - 1.0).abs());
        worst.residual = worst.residual.max(report.max_detailed_residual);
        let tau = setup.protocol().duration();
        let cons = conservation_residual(setup.protocol(), &[0.0, tau / 2.0, tau])?;
        worst.conservation = worst.conservation.max(cons.iter().flatten().copied().fold(0.0, f64::max));
        worst.neg_sigma = worst.neg_sigma.max(-report.sigma);
        worst.excluded = worst.excluded.max(report.excluded_mass);
        points.push(PointReport { theta, report });
    }
    let checks = vec![
        Check::at_most("forward_normalization", true, worst.forward_norm, 1e-10),
        Check::at_most("reverse_normalization", true, worst.reverse_norm, 1e-10),
        Check::at_most("first_law_closure", undriven, worst.closure, 1e-9),
        Check::at_most("exchange_ft", undriven, worst.exchange_ft, 1e-9),
        Check::at_most("detailed_residual", undriven, worst.residual, 1e-9),
        Check::at_most("conservation_residual", undriven, worst.conservation, 1e-9),
        Check::at_most("entropy_production_negativity", undriven, worst.neg_sigma, 1e-12),
        Check::at_most("work_ft", false, worst.work_ft, 1e-9),
        Check::at_most("excluded_mass", false, worst.excluded, 1e-9),
    ];
    let passed = checks.iter().all(|c| c.passed || !c.hard);
    Ok(VerifyReport { config: cfg.clone(), passed, checks, points })
}

pub fn verify(cfg: &RunConfig, out: Option<&Path>) -> Result<u8> {
    let report = verify_report(cfg)?;
    with_output(out.or(cfg.outputs.report.as_deref()), |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)
    })?;
    let failed: Vec<&str> = report.checks.iter().filter(|c| c.hard && !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        eprintln!("all hard checks passed over {} points", report.points.len());
        Ok(EXIT_OK)
    } else {
        eprintln!("failed hard checks: {}", failed.join(", "));
        Ok(EXIT_FAILED)
    }
}
