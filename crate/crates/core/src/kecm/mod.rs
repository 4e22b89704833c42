//! Kalman expectation conditional maximization.
//!
//! Each iteration runs the smoother (or only the filter during the first
//! iterations), then updates `D`, `Γ`, `σ_o²` and the jump block one at a
//! time. With the jumps pinned at zero this is KEM.

pub mod calibrate;
pub mod laplace;
pub mod spikeslab;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bench::refresh_time_covariance;
use crate::error::{Error, Result};
use crate::kalman::{filter_only, forward_filter, smooth, SmootherMoments};
use crate::linalg::{cholesky, log_det, min_eigenvalue, rel_frobenius_change, symmetrized, ConditionalRegression};
use crate::model::{
    validate_panel, Hyperparameters, LaplaceJumpState, ObservationPanel, SpikeSlabJumpState, StateParams,
};

/// Expected sufficient statistics of the transition density.
#[derive(Debug, Clone)]
pub struct EStepStats {
    /// `Σ P(t−1|T) + X̄(t−1|T) X̄(t−1|T)ᵀ`
    pub a: DMatrix<f64>,
    /// `Σ P(t,t−1|T) + e(t) X̄(t−1|T)ᵀ` with `e(t) = X̄(t|T) − D − J(t)`
    pub b: DMatrix<f64>,
    /// `Σ P(t|T) + e(t) e(t)ᵀ`
    pub c: DMatrix<f64>,
    /// `Δ(t) = X̄(t|T) − D − X̄(t−1|T)`, entry `c` for time `c + 1`. Filtered
    /// means replace the smoothed ones for filter-only moments.
    pub increments: Vec<DVector<f64>>,
}

impl EStepStats {
    /// `E Σ r(t) r(t)ᵀ = A + C − B − Bᵀ`.
    pub fn residual_scatter(&self) -> DMatrix<f64> {
        symmetrized(&self.a + &self.c - &self.b - self.b.transpose())
    }
}

pub fn estep_stats(moments: &SmootherMoments, drift: &DVector<f64>, jumps: &DMatrix<f64>) -> EStepStats {
    let x = &moments.smoothed_mean;
    let p = &moments.smoothed_cov;
    let n = drift.len();
    // the sums pair X(t) with `previous(t − 1)`; the jump-step increments
    // use the marginal `x[t − 1]` so that, with filter-only moments, a move
    // since an asset's last trade lands entirely at the trade
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    let mut increments = Vec::with_capacity(x.len().saturating_sub(1));
    for t in 1..x.len() {
        let (prev, prev_cov) = moments.previous(t - 1);
        let base = &x[t] - drift;
        let e = &base - jumps.column(t - 1);
        a += prev_cov;
        a.ger(1.0, prev, prev, 1.0);
        b += &moments.lag_one_cov[t - 1];
        b.ger(1.0, &e, prev, 1.0);
        c += &p[t];
        c.ger(1.0, &e, &e, 1.0);
        increments.push(base - &x[t - 1]);
    }
    EStepStats { a: symmetrized(a), b, c: symmetrized(c), increments }
}

/// Conditional mode of `D` given `Γ` and the jumps.
pub fn update_drift(
    moments: &SmootherMoments,
    jumps: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    hyper: &Hyperparameters,
) -> Result<DVector<f64>> {
    let x = &moments.smoothed_mean;
    let n = gamma.nrows();
    let steps = x.len().saturating_sub(1) as f64;
    let mut g = DVector::zeros(n);
    for (t, xt) in x.iter().enumerate().skip(1) {
        g += xt - moments.previous(t - 1).0 - jumps.column(t - 1);
    }
    // F⁻¹ D = σ_D⁻² D̄ + Γ⁻¹ g, multiplied through by Γ
    let s = 1.0 / hyper.drift_var;
    let lhs = symmetrized(DMatrix::identity(n, n) * steps + gamma * s);
    let rhs = gamma * &hyper.drift_mean * s + g;
    Ok(cholesky(&lhs, "drift system")?.solve(&rhs))
}

/// `Γ = (A + C − B − Bᵀ + W_o) / (T − 1 + η)`.
pub fn update_gamma(stats: &EStepStats, hyper: &Hyperparameters) -> DMatrix<f64> {
    let steps = stats.increments.len() as f64;
    symmetrized((stats.residual_scatter() + &hyper.wishart_scale) / (steps + hyper.wishart_dof))
}

pub fn update_obs_var(panel: &ObservationPanel, moments: &SmootherMoments, hyper: &Hyperparameters) -> DVector<f64> {
    let n = panel.n_assets();
    let mut sum = DVector::<f64>::zeros(n);
    let mut count = vec![0usize; n];
    for t in 0..panel.n_times() {
        for &(i, y) in panel.at(t) {
            let r = y - moments.smoothed_mean[t][i];
            sum[i] += r * r + moments.smoothed_cov[t][(i, i)];
            count[i] += 1;
        }
    }
    DVector::from_fn(n, |i, _| (2.0 * hyper.obs_scale + sum[i]) / (2.0 * hyper.obs_shape + 2.0 + count[i] as f64))
}

/// Iteration controls shared by all KECM drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KecmRunConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub filter_only_iters: usize,
    pub inner_cycles: usize,
    pub seed: u64,
}

impl Default for KecmRunConfig {
    fn default() -> Self {
        Self { max_iters: 500, rel_tol: 1e-3, filter_only_iters: 10, inner_cycles: 3, seed: 0 }
    }
}

impl KecmRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if self.inner_cycles == 0 {
            return Err(Error::invalid("inner_cycles must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Kem,
    KecmLaplace,
    KecmSpikeslab,
    Gibbs,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Kem, Method::KecmLaplace, Method::KecmSpikeslab, Method::Gibbs];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kem => "kem",
            Method::KecmLaplace => "kecm-laplace",
            Method::KecmSpikeslab => "kecm-spikeslab",
            Method::Gibbs => "gibbs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::invalid(format!("unknown method `{s}` (expected kem, kecm-laplace, kecm-spikeslab or gibbs)"))
        })
    }
}

/// One row of the iteration trace: the value at the iterate produced by
/// iteration `iter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub log_posterior: f64,
    pub rel_change: f64,
    pub wall_time_s: f64,
    /// False while the iterate came from filtered moments.
    pub smoothed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JumpEstimate {
    None,
    Laplace(LaplaceJumpState),
    SpikeSlab(SpikeSlabJumpState),
}

impl JumpEstimate {
    pub fn as_prior(&self) -> JumpPrior<'_> {
        match self {
            JumpEstimate::None => JumpPrior::None,
            JumpEstimate::Laplace(s) => JumpPrior::Laplace(s),
            JumpEstimate::SpikeSlab(s) => JumpPrior::SpikeSlab(s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub method: Method,
    pub params: StateParams,
    pub jumps: JumpEstimate,
    /// Iterations for KECM, kept sweeps for Gibbs.
    pub iterations: usize,
    pub converged: bool,
    pub log_posterior: f64,
    pub trace: Vec<TraceRow>,
    pub wall_time_s: f64,
    pub notes: Vec<String>,
}

/// The JSON-facing part of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub method: Method,
    pub n_assets: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_log_posterior: f64,
    pub wall_time_s: f64,
    pub drift: Vec<f64>,
    pub obs_var: Vec<f64>,
    pub n_jumps: usize,
    pub spike_prob: Option<f64>,
    pub notes: Vec<String>,
}

impl EstimationReport {
    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.params.gamma
    }

    pub fn jump_matrix(&self, n_times: usize) -> DMatrix<f64> {
        match &self.jumps {
            JumpEstimate::None => DMatrix::zeros(self.params.n_assets(), n_times.saturating_sub(1)),
            JumpEstimate::Laplace(s) => s.jumps.clone(),
            JumpEstimate::SpikeSlab(s) => s.jumps.clone(),
        }
    }

    pub fn summary(&self) -> ReportSummary {
        let (n_jumps, spike_prob) = match &self.jumps {
            JumpEstimate::None => (0, None),
            JumpEstimate::Laplace(s) => (s.jumps.iter().filter(|v| **v != 0.0).count(), None),
            JumpEstimate::SpikeSlab(s) => (s.indicator.iter().filter(|z| **z).count(), Some(s.spike_prob)),
        };
        ReportSummary {
            method: self.method,
            n_assets: self.params.n_assets(),
            iterations: self.iterations,
            converged: self.converged,
            final_log_posterior: self.log_posterior,
            wall_time_s: self.wall_time_s,
            drift: self.params.drift.iter().copied().collect(),
            obs_var: self.params.obs_var.iter().copied().collect(),
            n_jumps,
            spike_prob,
            notes: self.notes.clone(),
        }
    }
}

/// Jump block passed to [`log_posterior`].
#[derive(Debug, Clone, Copy)]
pub enum JumpPrior<'a> {
    None,
    Laplace(&'a LaplaceJumpState),
    SpikeSlab(&'a SpikeSlabJumpState),
}

/// Log prior of `(D, Γ, σ_o²)` up to a constant.
///
/// `Γ` enters as `−η/2 log|Γ| − ½ tr(W_o Γ⁻¹)`, whose conditional mode
/// under the transition likelihood is the `Γ` update.
pub fn log_prior_state(params: &StateParams, hyper: &Hyperparameters) -> Result<f64> {
    let dd = &params.drift - &hyper.drift_mean;
    let mut lp = -0.5 * dd.norm_squared() / hyper.drift_var;
    let chol = cholesky(&params.gamma, "gamma")?;
    let tr = chol.solve(&hyper.wishart_scale).trace();
    lp += -0.5 * hyper.wishart_dof * log_det(&chol) - 0.5 * tr;
    for &v in params.obs_var.iter() {
        lp += -(hyper.obs_shape + 1.0) * v.ln() - hyper.obs_scale / v;
    }
    Ok(lp)
}

fn log_prior_jumps(
    panel: &ObservationPanel,
    gamma: &DMatrix<f64>,
    jumps: JumpPrior<'_>,
    hyper: &Hyperparameters,
) -> Result<f64> {
    Ok(match jumps {
        JumpPrior::None => 0.0,
        JumpPrior::Laplace(s) => laplace::log_prior(s, hyper),
        JumpPrior::SpikeSlab(s) => {
            let reg = ConditionalRegression::new(gamma)?;
            spikeslab::log_prior(s, &reg, &panel.jump_mask(), hyper)
        }
    })
}

fn jump_matrix_of(panel: &ObservationPanel, jumps: JumpPrior<'_>) -> DMatrix<f64> {
    match jumps {
        JumpPrior::None => DMatrix::zeros(panel.n_assets(), panel.n_times() - 1),
        JumpPrior::Laplace(s) => s.jumps.clone(),
        JumpPrior::SpikeSlab(s) => s.jumps.clone(),
    }
}

/// `log p(y | θ) + log p(θ)` up to a constant fixed by the panel. The
/// states are integrated out by the filter's prediction-error decomposition.
pub fn log_posterior(
    panel: &ObservationPanel,
    params: &StateParams,
    jumps: JumpPrior<'_>,
    hyper: &Hyperparameters,
) -> Result<f64> {
    let j = jump_matrix_of(panel, jumps);
    let ll = forward_filter(panel, params, &j)?.log_likelihood;
    Ok(ll + log_prior_state(params, hyper)? + log_prior_jumps(panel, &params.gamma, jumps, hyper)?)
}

/// Starting point: refresh-time covariance, zero drift, prior-mode noise,
/// first observed prices and a wide initial covariance.
pub fn initial_params(panel: &ObservationPanel, hyper: &Hyperparameters) -> Result<StateParams> {
    let n = panel.n_assets();
    let gamma = match refresh_time_covariance(panel) {
        Ok(g) => g,
        Err(e) => {
            log::warn!("refresh-time covariance unavailable ({e}); starting from the prior scale");
            &hyper.wishart_scale / (hyper.wishart_dof + n as f64 + 1.0)
        }
    };
    let first = panel.first_prices();
    Ok(StateParams {
        drift: DVector::zeros(n),
        gamma,
        obs_var: DVector::from_element(n, hyper.obs_var_mode()),
        init_mean: DVector::from_iterator(n, first.iter().map(|v| v.unwrap_or(0.0))),
        init_cov: DMatrix::identity(n, n) * (hyper.wishart_scale_level() * 100.0),
    })
}

/// Everything a jump block needs for its conditional M-steps.
pub(crate) struct JumpStepContext<'a> {
    pub increments: &'a [DVector<f64>],
    pub reg: &'a ConditionalRegression,
    pub mask: &'a DMatrix<bool>,
    pub hyper: &'a Hyperparameters,
    pub cycles: usize,
}

pub(crate) trait JumpBlock {
    fn jumps(&self) -> &DMatrix<f64>;
    fn m_step(&mut self, ctx: &JumpStepContext<'_>) -> Result<()>;
    fn prior(&self) -> JumpPrior<'_>;
    fn into_estimate(self) -> JumpEstimate;
    /// The part of the jump log prior that moves with `Γ`, if any.
    fn gamma_terms(&self, _reg: &ConditionalRegression, _mask: &DMatrix<bool>) -> Option<f64> {
        None
    }
}

/// `−(T−1+η)/2 log|Γ| − ½ tr(Γ⁻¹(S + W_o))`, maximized by [`update_gamma`].
fn gamma_objective(gamma: &DMatrix<f64>, stats: &EStepStats, hyper: &Hyperparameters) -> Result<f64> {
    let chol = cholesky(gamma, "gamma")?;
    let m = stats.residual_scatter() + &hyper.wishart_scale;
    let k = stats.increments.len() as f64 + hyper.wishart_dof;
    Ok(-0.5 * k * log_det(&chol) - 0.5 * chol.solve(&m).trace())
}

/// Generalized CM step for `Γ` when the jump prior depends on it: take the
/// closed-form update, or the longest step toward it by halving that does
/// not lower the conditional objective.
fn guarded_gamma<B: JumpBlock>(
    proposal: DMatrix<f64>,
    old: &DMatrix<f64>,
    stats: &EStepStats,
    block: &B,
    mask: &DMatrix<bool>,
    hyper: &Hyperparameters,
) -> Result<DMatrix<f64>> {
    let objective = |g: &DMatrix<f64>| -> Result<Option<f64>> {
        let reg = ConditionalRegression::new(g)?;
        Ok(block.gamma_terms(&reg, mask).map(|p| p + gamma_objective(g, stats, hyper).unwrap_or(f64::NEG_INFINITY)))
    };
    let Some(base) = objective(old)? else {
        return Ok(proposal);
    };
    let mut step = 1.0;
    for _ in 0..30 {
        let g = symmetrized(old + (&proposal - old) * step);
        if objective(&g)?.is_some_and(|v| v >= base) {
            return Ok(g);
        }
        step *= 0.5;
    }
    Ok(old.clone())
}

pub(crate) struct NoJumps(DMatrix<f64>);

impl JumpBlock for NoJumps {
    fn jumps(&self) -> &DMatrix<f64> {
        &self.0
    }

    fn m_step(&mut self, _ctx: &JumpStepContext<'_>) -> Result<()> {
        Ok(())
    }

    fn prior(&self) -> JumpPrior<'_> {
        JumpPrior::None
    }

    fn into_estimate(self) -> JumpEstimate {
        JumpEstimate::None
    }
}

pub(crate) fn check_inputs(panel: &ObservationPanel, hyper: &Hyperparameters, config: &KecmRunConfig) -> Result<()> {
    validate_panel(panel).into_result()?;
    hyper.validate()?;
    config.validate()?;
    if hyper.n_assets() != panel.n_assets() {
        return Err(Error::Dimension(format!(
            "hyperparameters are for N={} but the panel has N={}",
            hyper.n_assets(),
            panel.n_assets()
        )));
    }
    Ok(())
}

pub(crate) fn run_driver<B: JumpBlock>(
    method: Method,
    panel: &ObservationPanel,
    hyper: &Hyperparameters,
    config: &KecmRunConfig,
    mut params: StateParams,
    mut block: B,
) -> Result<EstimationReport> {
    let start = Instant::now();
    let mask = panel.jump_mask();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_rel = f64::NAN;

    for iter in 1..=config.max_iters {
        let filtering = iter <= config.filter_only_iters;
        let moments = if filtering {
            filter_only(panel, &params, block.jumps())?
        } else {
            smooth(panel, &params, block.jumps())?
        };
        // the forward pass just scored the previous iterate
        if iter > 1 {
            let lp = moments.log_likelihood()
                + log_prior_state(&params, hyper)?
                + log_prior_jumps(panel, &params.gamma, block.prior(), hyper)?;
            trace.push(TraceRow {
                iter: iter - 1,
                log_posterior: lp,
                rel_change: last_rel,
                wall_time_s: start.elapsed().as_secs_f64(),
                smoothed: iter - 1 > config.filter_only_iters,
            });
        }

        let gamma_old = params.gamma.clone();
        params.drift = update_drift(&moments, block.jumps(), &gamma_old, hyper)?;
        let stats = estep_stats(&moments, &params.drift, block.jumps());
        params.gamma = guarded_gamma(update_gamma(&stats, hyper), &gamma_old, &stats, &block, &mask, hyper)?;
        params.obs_var = update_obs_var(panel, &moments, hyper);
        if params.gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "gamma update".into(), step: iter });
        }
        let reg = ConditionalRegression::new(&params.gamma)?;
        block.m_step(&JumpStepContext {
            increments: &stats.increments,
            reg: &reg,
            mask: &mask,
            hyper,
            cycles: config.inner_cycles,
        })?;

        iterations = iter;
        last_rel = rel_frobenius_change(&params.gamma, &gamma_old);
        log::debug!("{method} iter {iter}: rel change {last_rel:.3e}");
        if !filtering && last_rel < config.rel_tol {
            converged = true;
            break;
        }
    }

    let lp = log_posterior(panel, &params, block.prior(), hyper)?;
    trace.push(TraceRow {
        iter: iterations,
        log_posterior: lp,
        rel_change: last_rel,
        wall_time_s: start.elapsed().as_secs_f64(),
        smoothed: iterations > config.filter_only_iters,
    });
    let mut notes = Vec::new();
    if !converged {
        notes.push(format!("stopped at max_iters={} without meeting rel_tol", config.max_iters));
        log::warn!("{method} did not converge in {} iterations", config.max_iters);
    }
    if min_eigenvalue(&params.gamma) <= 0.0 {
        return Err(Error::not_pd("final gamma estimate"));
    }
    Ok(EstimationReport {
        method,
        params,
        jumps: block.into_estimate(),
        iterations,
        converged,
        log_posterior: lp,
        trace,
        wall_time_s: start.elapsed().as_secs_f64(),
        notes,
    })
}

/// KECM with every jump pinned to zero.
pub fn run_kem(panel: &ObservationPanel, hyper: &Hyperparameters, config: &KecmRunConfig) -> Result<EstimationReport> {
    check_inputs(panel, hyper, config)?;
    let params = initial_params(panel, hyper)?;
    run_kem_from(panel, hyper, config, params)
}

pub fn run_kem_from(
    panel: &ObservationPanel,
    hyper: &Hyperparameters,
    config: &KecmRunConfig,
    params: StateParams,
) -> Result<EstimationReport> {
    check_inputs(panel, hyper, config)?;
    let block = NoJumps(DMatrix::zeros(panel.n_assets(), panel.n_times() - 1));
    run_driver(Method::Kem, panel, hyper, config, params, block)
}

/// Indices of trace rows whose value fell below the previous row by more
/// than `slack · |previous|`, counting only iterates built from smoothed
/// moments.
pub fn ascent_violations(trace: &[TraceRow], slack: f64) -> Vec<usize> {
    trace
        .windows(2)
        .filter(|w| w[1].smoothed && w[1].log_posterior < w[0].log_posterior - slack * w[0].log_posterior.abs())
        .map(|w| w[1].iter)
        .collect()
}
