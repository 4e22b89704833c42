//! Scoring metrics, the refresh-time baseline and the Monte Carlo
//! benchmark harness.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{run_gibbs, GibbsConfig};
use crate::kecm::laplace::run_kecm_laplace;
use crate::kecm::spikeslab::run_kecm_spikeslab;
use crate::kecm::{run_kem, EstimationReport, KecmRunConfig};
use crate::linalg::{cholesky, min_eigenvalue, symmetrized};
use crate::model::{HyperparameterConfig, ObservationPanel};
use crate::simulate::{simulate, SimConfig};

/// `Γ̂⁻¹1 / (1ᵀΓ̂⁻¹1)`.
pub fn min_variance_portfolio(gamma_hat: &DMatrix<f64>) -> Result<DVector<f64>> {
    let ones = DVector::from_element(gamma_hat.nrows(), 1.0);
    let x = cholesky(gamma_hat, "covariance estimate")?.solve(&ones);
    let s = x.sum();
    if !(s.abs() > 0.0) || !s.is_finite() {
        return Err(Error::not_pd("covariance estimate gives no unit-sum portfolio"));
    }
    Ok(x / s)
}

pub fn portfolio_variance(w: &DVector<f64>, gamma: &DMatrix<f64>) -> f64 {
    w.dot(&(gamma * w))
}

/// `‖Γ̂ − Γ‖_F / ‖Γ‖_F`.
pub fn rel_frobenius(gamma_hat: &DMatrix<f64>, gamma: &DMatrix<f64>) -> f64 {
    (gamma_hat - gamma).norm() / gamma.norm()
}

/// Refresh-time sample covariance per grid step.
///
/// A block closes as soon as every asset has traded since the previous
/// close; each asset contributes its latest price at the close. Increments
/// between closes are scaled down by the mean block length. A ridge of
/// `1e-10·trace/N` is added when the result is not positive definite.
pub fn refresh_time_covariance(panel: &ObservationPanel) -> Result<DMatrix<f64>> {
    let n = panel.n_assets();
    let mut latest = vec![f64::NAN; n];
    let mut fresh = vec![false; n];
    let mut closes: Vec<(usize, DVector<f64>)> = Vec::new();
    for t in 0..panel.n_times() {
        for &(i, y) in panel.at(t) {
            latest[i] = y;
            fresh[i] = true;
        }
        if fresh.iter().all(|f| *f) {
            closes.push((t, DVector::from_column_slice(&latest)));
            fresh.iter_mut().for_each(|f| *f = false);
        }
    }
    if closes.len() < 3 {
        return Err(Error::invalid(format!(
            "refresh-time covariance needs at least 2 refresh blocks, found {}",
            closes.len().saturating_sub(1)
        )));
    }
    let k = closes.len() - 1;
    let diffs: Vec<DVector<f64>> = closes.windows(2).map(|w| &w[1].1 - &w[0].1).collect();
    let mean_len = (closes[k].0 - closes[0].0) as f64 / k as f64;
    let mean = diffs.iter().fold(DVector::zeros(n), |acc, d| acc + d) / k as f64;
    let mut cov = DMatrix::zeros(n, n);
    for d in &diffs {
        let c = d - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    let mut cov = symmetrized(cov / ((k - 1) as f64 * mean_len));
    if min_eigenvalue(&cov) <= 0.0 || cholesky(&cov, "refresh covariance").is_err() {
        let ridge = (1e-10 * cov.trace() / n as f64).max(f64::MIN_POSITIVE);
        for i in 0..n {
            cov[(i, i)] += ridge;
        }
        log::debug!("refresh-time covariance repaired with ridge {ridge:e}");
    }
    Ok(cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Kem,
    KecmLaplace,
    KecmSpikeslab,
    Gibbs,
    Refresh,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Kem => "kem",
            Estimator::KecmLaplace => "kecm-laplace",
            Estimator::KecmSpikeslab => "kecm-spikeslab",
            Estimator::Gibbs => "gibbs",
            Estimator::Refresh => "refresh",
        }
    }
}

/// Jump setting of one table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub zeta: f64,
    pub slab_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub grid: Vec<GridCell>,
    pub reps: usize,
    pub estimators: Vec<Estimator>,
    /// Simulation settings; `zeta` and `slab_var` are overridden per cell.
    pub sim: SimConfig,
    pub kecm: KecmRunConfig,
    pub gibbs: GibbsConfig,
    pub hyper: HyperparameterConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            grid: vec![GridCell { zeta: 1.0, slab_var: 1e-4 }, GridCell { zeta: 0.999, slab_var: 1e-4 }],
            reps: 10,
            estimators: vec![Estimator::Kem, Estimator::KecmLaplace, Estimator::KecmSpikeslab, Estimator::Refresh],
            sim: SimConfig::default(),
            kecm: KecmRunConfig::default(),
            gibbs: GibbsConfig::default(),
            hyper: HyperparameterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub cell: usize,
    pub zeta: f64,
    pub slab_var: f64,
    pub rep: usize,
    pub estimator: Estimator,
    pub rel_frobenius: f64,
    pub portfolio_variance: f64,
    /// Variance of the minimum-variance portfolio built from the truth.
    pub oracle_portfolio_variance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub cell: usize,
    pub zeta: f64,
    pub slab_var: f64,
    pub estimator: Estimator,
    pub mean_rel_frobenius: f64,
    pub median_rel_frobenius: f64,
    pub mean_portfolio_variance: f64,
    pub mean_wall_time_s: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub raw: Vec<RawRow>,
    pub mean: Vec<MeanRow>,
}

/// Seed of replication `rep` in cell `cell`, mixed with splitmix64.
pub fn replication_seed(seed: u64, cell: usize, rep: usize) -> u64 {
    let mut z = seed ^ ((cell as u64) << 32) ^ (rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[allow(clippy::too_many_arguments)]
fn score(
    cell_idx: usize,
    cell: GridCell,
    rep: usize,
    estimator: Estimator,
    truth: &DMatrix<f64>,
    oracle_pv: f64,
    outcome: Result<(DMatrix<f64>, usize, bool)>,
    wall: f64,
) -> RawRow {
    let mut row = RawRow {
        cell: cell_idx,
        zeta: cell.zeta,
        slab_var: cell.slab_var,
        rep,
        estimator,
        rel_frobenius: f64::NAN,
        portfolio_variance: f64::NAN,
        oracle_portfolio_variance: oracle_pv,
        iterations: 0,
        converged: false,
        wall_time_s: wall,
        error: None,
    };
    match outcome.and_then(|(g, it, conv)| Ok((min_variance_portfolio(&g)?, g, it, conv))) {
        Ok((w, g, it, conv)) => {
            row.rel_frobenius = rel_frobenius(&g, truth);
            row.portfolio_variance = portfolio_variance(&w, truth);
            row.iterations = it;
            row.converged = conv;
        }
        Err(e) => {
            log::warn!("{} failed in cell {} rep {}: {e}", estimator.name(), cell_idx + 1, rep + 1);
            row.error = Some(e.to_string());
        }
    }
    row
}

fn from_report(r: Result<EstimationReport>) -> Result<(DMatrix<f64>, usize, bool)> {
    r.map(|r| (r.params.gamma, r.iterations, r.converged))
}

fn run_replication(cfg: &BenchConfig, cell_idx: usize, rep: usize, seed: u64) -> Result<Vec<RawRow>> {
    let cell = cfg.grid[cell_idx];
    let sim_cfg = SimConfig { zeta: cell.zeta, slab_var: cell.slab_var, ..cfg.sim.clone() };
    let sim = simulate(&sim_cfg, replication_seed(seed, cell_idx, rep))?;
    let truth = &sim.truth.gamma;
    let oracle_pv = portfolio_variance(&min_variance_portfolio(truth)?, truth);
    let hyper = cfg.hyper.resolve(sim.panel.n_assets())?;
    let mut rows = Vec::new();
    let mut spikeslab: Option<EstimationReport> = None;
    for &est in &cfg.estimators {
        let start = Instant::now();
        let outcome = match est {
            Estimator::Kem => from_report(run_kem(&sim.panel, &hyper, &cfg.kecm)),
            Estimator::KecmLaplace => from_report(run_kecm_laplace(&sim.panel, &hyper, &cfg.kecm)),
            Estimator::KecmSpikeslab => {
                let r = run_kecm_spikeslab(&sim.panel, &hyper, &cfg.kecm);
                if let Ok(rep) = &r {
                    spikeslab = Some(rep.clone());
                }
                from_report(r)
            }
            Estimator::Gibbs => {
                let init = match spikeslab.clone() {
                    Some(r) => Ok(r),
                    None => run_kecm_spikeslab(&sim.panel, &hyper, &cfg.kecm),
                };
                let gcfg = GibbsConfig { seed: replication_seed(seed ^ 0x6B, cell_idx, rep), ..cfg.gibbs.clone() };
                from_report(init.and_then(|init| run_gibbs(&sim.panel, &hyper, &gcfg, &init).map(|(r, _)| r)))
            }
            Estimator::Refresh => refresh_time_covariance(&sim.panel).map(|g| (g, 0, true)),
        };
        let wall = start.elapsed().as_secs_f64();
        rows.push(score(cell_idx, cell, rep, est, truth, oracle_pv, outcome, wall));
    }
    Ok(rows)
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

pub fn run_benchmark(cfg: &BenchConfig, seed: u64) -> Result<BenchReport> {
    if cfg.grid.is_empty() || cfg.reps == 0 || cfg.estimators.is_empty() {
        return Err(Error::invalid("benchmark needs a grid, reps >= 1 and at least one estimator"));
    }
    cfg.sim.validate()?;
    cfg.kecm.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.grid.len()).flat_map(|c| (0..cfg.reps).map(move |r| (c, r))).collect();
    let results: Vec<Result<Vec<RawRow>>> = jobs.par_iter().map(|&(c, r)| run_replication(cfg, c, r, seed)).collect();
    let mut raw = Vec::new();
    for res in results {
        raw.extend(res?);
    }
    let mut mean = Vec::new();
    for (c, cell) in cfg.grid.iter().enumerate() {
        for &est in &cfg.estimators {
            let rows: Vec<&RawRow> = raw.iter().filter(|r| r.cell == c && r.estimator == est).collect();
            let ok: Vec<&&RawRow> = rows.iter().filter(|r| r.error.is_none()).collect();
            let k = ok.len() as f64;
            let mut errs: Vec<f64> = ok.iter().map(|r| r.rel_frobenius).collect();
            mean.push(MeanRow {
                cell: c,
                zeta: cell.zeta,
                slab_var: cell.slab_var,
                estimator: est,
                mean_rel_frobenius: errs.iter().sum::<f64>() / k,
                median_rel_frobenius: median(&mut errs),
                mean_portfolio_variance: ok.iter().map(|r| r.portfolio_variance).sum::<f64>() / k,
                mean_wall_time_s: rows.iter().map(|r| r.wall_time_s).sum::<f64>() / rows.len() as f64,
                n_ok: ok.len(),
                n_failed: rows.len() - ok.len(),
            });
        }
    }
    Ok(BenchReport { config: cfg.clone(), raw, mean })
}

impl BenchReport {
    /// Median relative Frobenius error of `est` in `cell`.
    pub fn median_error(&self, cell: usize, est: Estimator) -> Option<f64> {
        self.mean.iter().find(|m| m.cell == cell && m.estimator == est).map(|m| m.median_rel_frobenius)
    }

    /// Sets every wall-clock field to zero, for byte-stable artifacts.
    pub fn strip_timing(&mut self) {
        self.raw.iter_mut().for_each(|r| r.wall_time_s = 0.0);
        self.mean.iter_mut().for_each(|m| m.mean_wall_time_s = 0.0);
    }

    pub fn write_mean_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "zeta",
            "slab_var",
            "estimator",
            "mean_rel_frobenius",
            "median_rel_frobenius",
            "mean_portfolio_variance",
            "n_ok",
            "n_failed",
        ])?;
        for m in &self.mean {
            wtr.write_record([
                m.zeta.to_string(),
                m.slab_var.to_string(),
                m.estimator.name().to_string(),
                format!("{:e}", m.mean_rel_frobenius),
                format!("{:e}", m.median_rel_frobenius),
                format!("{:e}", m.mean_portfolio_variance),
                m.n_ok.to_string(),
                m.n_failed.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_raw_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "zeta",
            "slab_var",
            "rep",
            "estimator",
            "rel_frobenius",
            "portfolio_variance",
            "oracle_portfolio_variance",
            "iterations",
            "converged",
            "error",
        ])?;
        for r in &self.raw {
            wtr.write_record([
                r.zeta.to_string(),
                r.slab_var.to_string(),
                (r.rep + 1).to_string(),
                r.estimator.name().to_string(),
                format!("{:e}", r.rel_frobenius),
                format!("{:e}", r.portfolio_variance),
                format!("{:e}", r.oracle_portfolio_variance),
                r.iterations.to_string(),
                r.converged.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_timing_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["zeta", "slab_var", "rep", "estimator", "wall_time_s"])?;
        for r in &self.raw {
            wtr.write_record([
                r.zeta.to_string(),
                r.slab_var.to_string(),
                (r.rep + 1).to_string(),
                r.estimator.name().to_string(),
                format!("{:.6}", r.wall_time_s),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Markdown tables of mean portfolio variance, mean covariance error and
    /// mean run time, one row per grid cell.
    pub fn summary_markdown(&self) -> String {
        let ests = &self.config.estimators;
        let mut out = String::new();
        let header = |out: &mut String, title: &str| {
            let _ = writeln!(out, "## {title}\n");
            let names: Vec<&str> = ests.iter().map(|e| e.name()).collect();
            let _ = writeln!(out, "| zeta | slab_var | {} |", names.join(" | "));
            let _ = writeln!(out, "|---|---|{}", "---|".repeat(ests.len()));
        };
        type Column = (&'static str, fn(&MeanRow) -> String);
        let tables: [Column; 3] = [
            ("Portfolio variance (x1e8)", |m| format!("{:.4}", m.mean_portfolio_variance * 1e8)),
            ("Relative Frobenius covariance error", |m| format!("{:.3}", m.mean_rel_frobenius)),
            ("Run time (seconds)", |m| format!("{:.3}", m.mean_wall_time_s)),
        ];
        for (title, cell_fmt) in tables {
            header(&mut out, title);
            for (c, cell) in self.config.grid.iter().enumerate() {
                let vals: Vec<String> = ests
                    .iter()
                    .map(|e| {
                        self.mean
                            .iter()
                            .find(|m| m.cell == c && m.estimator == *e)
                            .map_or_else(|| "-".to_string(), cell_fmt)
                    })
                    .collect();
                let _ = writeln!(out, "| {} | {} | {} |", cell.zeta, cell.slab_var, vals.join(" | "));
            }
            out.push('\n');
        }
        out
    }
}
