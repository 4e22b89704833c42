//! Subcommand bodies.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::Path;

use anyhow::Context;
use jumpcov::bench::{run_benchmark, BenchConfig};
use jumpcov::gibbs::{run_gibbs, GibbsConfig};
use jumpcov::kecm::calibrate::{calibrate_lambda_prior, CalibrationPriors};
use jumpcov::kecm::laplace::run_kecm_laplace;
use jumpcov::kecm::spikeslab::run_kecm_spikeslab;
use jumpcov::kecm::{run_kem, KecmRunConfig, Method, ReportSummary};
use jumpcov::simulate::{simulate as run_simulation, SimConfig};
use jumpcov::theory::verify_theory as run_theory;
use jumpcov::{validate_panel, HyperparameterConfig, ObservationPanel};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::artifacts::{histogram, rows, Bin, OutDir};
use crate::failure::{load_json, runtime, usage, Failure, Tag};

/// Seed used by seeded commands when `--seed` is absent.
pub const DEFAULT_SEED: u64 = 0;

pub struct Options {
    pub seed: Option<u64>,
    pub timing: bool,
}

impl Options {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

fn load_or_default<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T, Failure> {
    path.map_or_else(|| Ok(T::default()), load_json)
}

/// Maps a library error raised while checking inputs to exit code 1.
fn invalid_config(e: jumpcov::Error) -> Failure {
    usage(format_args!("invalid config: {e}"))
}

#[derive(Debug, Serialize)]
struct JumpEvent {
    /// 1-based time of the increment `X(t) − X(t−1)` carrying the jump.
    t: usize,
    asset: usize,
    size: f64,
}

fn jump_events(jumps: &DMatrix<f64>) -> Vec<JumpEvent> {
    let mut out = Vec::new();
    for c in 0..jumps.ncols() {
        for i in 0..jumps.nrows() {
            let v = jumps[(i, c)];
            if v != 0.0 {
                out.push(JumpEvent { t: c + 2, asset: i + 1, size: v });
            }
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct TruthJson<'a> {
    seed: u64,
    config: &'a SimConfig,
    gamma: Vec<Vec<f64>>,
    drift: Vec<f64>,
    obs_var: Vec<f64>,
    n_jumps: usize,
    jumps: Vec<JumpEvent>,
    forced_observations: usize,
}

pub fn simulate(opts: &Options, config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg: SimConfig = load_or_default(config)?;
    cfg.validate().map_err(invalid_config)?;
    let seed = opts.seed();
    let sim = run_simulation(&cfg, seed).map_err(|e| runtime("simulation failed", e))?;
    let truth = &sim.truth;
    let dir = OutDir::create(out)?;
    dir.write("panel.csv", |w| Ok(sim.panel.write_csv(w)?))?;
    dir.matrix("gamma_true.csv", &truth.gamma)?;
    dir.write("latent.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "asset", "log_price"])?;
        for t in 0..truth.x.ncols() {
            for i in 0..truth.x.nrows() {
                wtr.write_record([(t + 1).to_string(), (i + 1).to_string(), format!("{:?}", truth.x[(i, t)])])?;
            }
        }
        wtr.flush()?;
        Ok(())
    })?;
    let jumps = jump_events(&truth.jumps);
    dir.json(
        "truth.json",
        &TruthJson {
            seed,
            config: &cfg,
            gamma: rows(&truth.gamma),
            drift: truth.drift.iter().copied().collect(),
            obs_var: truth.obs_var.iter().copied().collect(),
            n_jumps: jumps.len(),
            jumps,
            forced_observations: truth.forced_observations,
        },
    )
}

/// Settings for `estimate`; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub hyper: HyperparameterConfig,
    /// Iteration controls; also used for the spike-and-slab run that
    /// initializes the Gibbs sampler.
    pub kecm: KecmRunConfig,
    pub gibbs: GibbsConfig,
}

#[derive(Debug, Serialize)]
struct EstimateJson<'a> {
    #[serde(flatten)]
    summary: ReportSummary,
    n_times: usize,
    n_observations: usize,
    gamma: Vec<Vec<f64>>,
    config: &'a EstimateConfig,
}

fn read_panel(path: &Path) -> Result<ObservationPanel, Failure> {
    let file = File::open(path).map_err(|e| usage(format_args!("cannot open panel {}: {e}", path.display())))?;
    let panel = ObservationPanel::read_csv(BufReader::new(file))
        .map_err(|e| runtime(format_args!("cannot read panel {}", path.display()), e))?;
    validate_panel(&panel)
        .into_result()
        .map_err(|e| runtime(format_args!("panel {} is not estimable", path.display()), e))?;
    Ok(panel)
}

pub fn estimate(
    opts: &Options,
    method: Method,
    panel_path: &Path,
    config: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let mut cfg: EstimateConfig = load_or_default(config)?;
    if let Some(seed) = opts.seed {
        cfg.kecm.seed = seed;
        cfg.gibbs.seed = seed;
    }
    cfg.kecm.validate().map_err(invalid_config)?;
    cfg.gibbs.validate().map_err(invalid_config)?;
    let panel = read_panel(panel_path)?;
    let hyper = cfg.hyper.resolve(panel.n_assets()).map_err(invalid_config)?;
    log::info!("{} on {} assets x {} times", method.name(), panel.n_assets(), panel.n_times());

    let failed = |e| runtime(format_args!("{} failed", method.name()), e);
    let (mut report, chain) = match method {
        Method::Kem => (run_kem(&panel, &hyper, &cfg.kecm).map_err(failed)?, None),
        Method::KecmLaplace => (run_kecm_laplace(&panel, &hyper, &cfg.kecm).map_err(failed)?, None),
        Method::KecmSpikeslab => (run_kecm_spikeslab(&panel, &hyper, &cfg.kecm).map_err(failed)?, None),
        Method::Gibbs => {
            let init = run_kecm_spikeslab(&panel, &hyper, &cfg.kecm)
                .map_err(|e| runtime("spike-and-slab initialization failed", e))?;
            let (r, c) = run_gibbs(&panel, &hyper, &cfg.gibbs, &init).map_err(failed)?;
            (r, Some(c))
        }
    };
    if !opts.timing {
        report.wall_time_s = 0.0;
        report.trace.iter_mut().for_each(|r| r.wall_time_s = 0.0);
    }

    let dir = OutDir::create(out)?;
    dir.matrix("gamma.csv", report.gamma())?;
    dir.json(
        "report.json",
        &EstimateJson {
            summary: report.summary(),
            n_times: panel.n_times(),
            n_observations: panel.total_observations(),
            gamma: rows(report.gamma()),
            config: &cfg,
        },
    )?;
    match &chain {
        None => dir.write("trace.csv", |w| {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(["iter", "log_posterior", "rel_change", "wall_time_s", "smoothed"])?;
            for r in &report.trace {
                wtr.write_record([
                    r.iter.to_string(),
                    format!("{:?}", r.log_posterior),
                    format!("{:?}", r.rel_change),
                    format!("{:?}", r.wall_time_s),
                    r.smoothed.to_string(),
                ])?;
            }
            wtr.flush()?;
            Ok(())
        })?,
        Some(chain) => {
            dir.write("trace.csv", |w| {
                let mut wtr = csv::Writer::from_writer(w);
                wtr.write_record(["sweep", "log_density", "spike_prob", "gamma_trace"])?;
                for r in &chain.rows {
                    wtr.write_record([
                        r.sweep.to_string(),
                        format!("{:?}", r.log_density),
                        format!("{:?}", r.spike_prob),
                        format!("{:?}", r.gamma_trace),
                    ])?;
                }
                wtr.flush()?;
                Ok(())
            })?;
            dir.matrix("gamma_sd.csv", &chain.sample_var.map(f64::sqrt))?;
        }
    }
    let jumps = jump_events(&report.jump_matrix(panel.n_times()));
    dir.write("jumps.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "asset", "size"])?;
        for j in &jumps {
            wtr.write_record([j.t.to_string(), j.asset.to_string(), format!("{:?}", j.size)])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    log::info!("{} iterations, converged: {}", report.iterations, report.converged);
    Ok(())
}

pub fn benchmark(opts: &Options, config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg: BenchConfig = load_json(config)?;
    if cfg.grid.is_empty() || cfg.reps == 0 || cfg.estimators.is_empty() {
        return Err(usage("invalid config: benchmark needs a non-empty grid, reps >= 1 and at least one estimator"));
    }
    cfg.sim.validate().map_err(invalid_config)?;
    cfg.kecm.validate().map_err(invalid_config)?;
    cfg.gibbs.validate().map_err(invalid_config)?;
    cfg.hyper.resolve(cfg.sim.n_assets).map_err(invalid_config)?;

    let mut report = run_benchmark(&cfg, opts.seed()).map_err(|e| runtime("benchmark failed", e))?;
    if !opts.timing {
        report.strip_timing();
    }
    let dir = OutDir::create(out)?;
    dir.write("results_mean.csv", |w| Ok(report.write_mean_csv(w)?))?;
    dir.write("results_raw.csv", |w| Ok(report.write_raw_csv(w)?))?;
    dir.write("timing.csv", |w| Ok(report.write_timing_csv(w)?))?;
    dir.write("summary.md", |w| Ok(w.write_all(report.summary_markdown().as_bytes())?))?;
    let failed = report.raw.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} estimator runs failed; see results_raw.csv");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CalibrationJson<'a> {
    lambda_shape: f64,
    lambda_rate: f64,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
    priors: &'a CalibrationPriors,
}

pub fn calibrate(
    opts: &Options,
    config: Option<&Path>,
    n_outer: usize,
    n_inner: usize,
    bins: usize,
    out: &Path,
) -> Result<(), Failure> {
    let priors: CalibrationPriors = load_or_default(config)?;
    let seed = opts.seed();
    let res = calibrate_lambda_prior(&priors, n_outer, n_inner, seed).map_err(|e| match e {
        jumpcov::Error::Invalid(_) => invalid_config(e),
        e => runtime("calibration failed", e),
    })?;
    let dir = OutDir::create(out)?;
    dir.json(
        "calibration.json",
        &CalibrationJson {
            lambda_shape: res.lambda_shape,
            lambda_rate: res.lambda_rate,
            n_outer,
            n_inner,
            seed,
            priors: &priors,
        },
    )?;
    let hist: Vec<Bin> = histogram(&res.lambdas, bins);
    dir.write("histogram.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["lower", "upper", "count"])?;
        for b in &hist {
            wtr.write_record([format!("{:?}", b.lower), format!("{:?}", b.upper), b.count.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    dir.write("lambda_draws.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["draw", "lambda", "mean_spike_posterior"])?;
        for (k, (l, p)) in res.lambdas.iter().zip(&res.mean_spike_posterior).enumerate() {
            wtr.write_record([(k + 1).to_string(), format!("{l:?}"), format!("{p:?}")])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    println!("lambda_shape={:?} lambda_rate={:?}", res.lambda_shape, res.lambda_rate);
    Ok(())
}

pub fn verify_theory(opts: &Options, instances: usize, trials: usize, out: Option<&Path>) -> Result<(), Failure> {
    if instances == 0 || trials == 0 {
        return Err(usage("--instances and --trials must be at least 1"));
    }
    let rows = run_theory(instances, trials, opts.seed()).map_err(|e| runtime("theory checks failed to run", e))?;
    let emit = |w: &mut dyn Write| -> anyhow::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["instance", "quantity", "bound", "empirical", "pass"])?;
        for r in &rows {
            wtr.write_record([
                r.instance.to_string(),
                r.quantity.clone(),
                format!("{:?}", r.bound),
                format!("{:?}", r.empirical),
                r.pass.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    };
    match out {
        Some(path) => {
            let mut f = io::BufWriter::new(
                File::create(path).with_context(|| format!("cannot create {}", path.display())).runtime()?,
            );
            emit(&mut f).runtime()?;
            f.flush().runtime()?;
        }
        None => emit(&mut io::stdout().lock()).runtime()?,
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    eprintln!("{} checks, {} failed", rows.len(), failed);
    Ok(())
}
