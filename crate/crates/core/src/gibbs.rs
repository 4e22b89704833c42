//! Gibbs sampler over missing prices, states, jumps and parameters, with a
//! Rao-Blackwellized posterior mean of `Γ`.
//!
//! One sweep draws, in order: the missing prices, each `X(t)` given its
//! neighbours, the jump indicators and sizes, then `D`, `Γ`, `σ_o²`, `ζ`
//! and the slab variances from their conjugate conditionals.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::smooth;
use crate::kecm::spikeslab::slab_shrink;
use crate::kecm::{check_inputs, log_posterior, EstimationReport, JumpEstimate, KecmRunConfig, Method};
use crate::linalg::{cholesky, spd_inverse, symmetrized, ConditionalRegression};
use crate::model::{Hyperparameters, ObservationPanel, SpikeSlabJumpState, StateParams};
use crate::random::{inverse_gamma, inverse_wishart, seeded_rng, standard_normal_vec};

/// Blocks held fixed at their initial values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsFreeze {
    pub missing: bool,
    pub states: bool,
    pub jumps: bool,
    pub drift: bool,
    pub gamma: bool,
    pub obs_var: bool,
    pub spike_prob: bool,
    pub slab_var: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    /// Jump sweeps per outer sweep.
    pub inner_sweeps: usize,
    pub seed: u64,
    /// Keep every post-burn-in `Γ` draw and conditional mean.
    pub keep_samples: bool,
    pub freeze: GibbsFreeze,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            burn_in: 2_000,
            inner_sweeps: 3,
            seed: 0,
            keep_samples: false,
            freeze: GibbsFreeze::default(),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_samples {
            return Err(Error::invalid("burn_in must be smaller than n_samples"));
        }
        if self.inner_sweeps == 0 {
            return Err(Error::invalid("inner_sweeps must be at least 1"));
        }
        Ok(())
    }
}

/// Full sampler state.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    /// `N × T` latent prices.
    pub x: DMatrix<f64>,
    /// `N × T` prices with the missing entries filled in.
    pub y_tot: DMatrix<f64>,
    pub indicator: DMatrix<bool>,
    pub jumps: DMatrix<f64>,
    pub params: StateParams,
    pub spike_prob: f64,
    pub slab_var: DMatrix<f64>,
}

/// One kept sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub sweep: usize,
    pub log_density: f64,
    pub spike_prob: f64,
    pub gamma_trace: f64,
}

#[derive(Debug, Clone)]
pub struct GibbsChain {
    pub rows: Vec<ChainRow>,
    /// Average of the `Γ` draws.
    pub sample_mean: DMatrix<f64>,
    /// Element-wise variance of the `Γ` draws.
    pub sample_var: DMatrix<f64>,
    /// Average of `E[Γ | rest]`, the Rao-Blackwell estimate.
    pub rb_mean: DMatrix<f64>,
    pub rb_var: DMatrix<f64>,
    /// False when `η + T − 1 ≤ N + 1` and the estimate fell back to
    /// `sample_mean`.
    pub rao_blackwell: bool,
    pub gamma_samples: Vec<DMatrix<f64>>,
    pub cond_means: Vec<DMatrix<f64>>,
    pub final_state: GibbsState,
}

/// Copies observed prices and draws the rest from `N(Xᵢ(t), σ_o,ᵢ²)`.
pub fn sample_missing_obs<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    obs_var: &DVector<f64>,
    panel: &ObservationPanel,
    rng: &mut R,
) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(x.nrows(), x.ncols());
    for t in 0..x.ncols() {
        let obs = panel.at(t);
        let mut k = 0;
        for i in 0..x.nrows() {
            let w: f64 = rng.sample(StandardNormal);
            if k < obs.len() && obs[k].0 == i {
                y[(i, t)] = obs[k].1;
                k += 1;
            } else {
                y[(i, t)] = x[(i, t)] + obs_var[i].sqrt() * w;
            }
        }
    }
    y
}

/// Precision factor and its use for drawing `N(P⁻¹b, P⁻¹)`.
struct PrecisionDraw {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl PrecisionDraw {
    fn new(prec: DMatrix<f64>, what: &str) -> Result<Self> {
        Ok(Self { chol: cholesky(&symmetrized(prec), what)? })
    }

    fn mean(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    fn draw<R: Rng + ?Sized>(&self, b: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vec(rng, b.len());
        // P = LLᵀ, so L⁻ᵀz has covariance P⁻¹
        let noise = self.chol.l().tr_solve_lower_triangular(&z).expect("triangular factor is invertible");
        self.mean(b) + noise
    }
}

/// Conditional precisions for the first, interior and last times.
pub struct StateConditionals {
    gamma_prec: DMatrix<f64>,
    obs_prec: DVector<f64>,
    init_prec: DMatrix<f64>,
    first: PrecisionDraw,
    interior: PrecisionDraw,
    last: PrecisionDraw,
}

impl StateConditionals {
    pub fn new(params: &StateParams) -> Result<Self> {
        let gamma_prec = spd_inverse(&params.gamma, "gamma")?;
        let init_prec = spd_inverse(&params.init_cov, "init_cov")?;
        let obs_prec = params.obs_var.map(|v| 1.0 / v);
        let so = DMatrix::from_diagonal(&obs_prec);
        Ok(Self {
            first: PrecisionDraw::new(&init_prec + &gamma_prec + &so, "first-time precision")?,
            interior: PrecisionDraw::new(&gamma_prec * 2.0 + &so, "interior precision")?,
            last: PrecisionDraw::new(&gamma_prec + &so, "last-time precision")?,
            gamma_prec,
            obs_prec,
            init_prec,
        })
    }

    /// Conditional mean and precision factor of `X(t)` given its neighbours.
    fn linear_term(
        &self,
        t: usize,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        params: &StateParams,
        jumps: &DMatrix<f64>,
    ) -> (DVector<f64>, &PrecisionDraw) {
        let t_len = x.ncols();
        let mut b = self.obs_prec.component_mul(&y.column(t).into_owned());
        let mut neighbours = DVector::zeros(x.nrows());
        if t > 0 {
            neighbours += x.column(t - 1) + &params.drift + jumps.column(t - 1);
        }
        if t + 1 < t_len {
            neighbours += x.column(t + 1) - &params.drift - jumps.column(t);
        }
        b += &self.gamma_prec * neighbours;
        let draw = if t == 0 {
            b += &self.init_prec * &params.init_mean;
            &self.first
        } else if t + 1 == t_len {
            &self.last
        } else {
            &self.interior
        };
        (b, draw)
    }

    /// Conditional mean of `X(t)` given its neighbours.
    pub fn conditional_mean(
        &self,
        t: usize,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        params: &StateParams,
        jumps: &DMatrix<f64>,
    ) -> DVector<f64> {
        let (b, d) = self.linear_term(t, x, y, params, jumps);
        d.mean(&b)
    }
}

/// Single-site draws of `X(1), …, X(T)` in order, each given its current
/// neighbours and the completed prices.
pub fn sample_states<R: Rng + ?Sized>(
    x: &mut DMatrix<f64>,
    y_tot: &DMatrix<f64>,
    params: &StateParams,
    jumps: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let cond = StateConditionals::new(params)?;
    for t in 0..x.ncols() {
        let (b, d) = cond.linear_term(t, x, y_tot, params, jumps);
        let draw = d.draw(&b, rng);
        x.set_column(t, &draw);
    }
    Ok(())
}

/// `log(ζ N(0; a, b²))` and `log((1−ζ) N(0; a, b²+σ²))`, dropping the
/// shared `−½ log 2π`.
fn indicator_log_weights(a: f64, b2: f64, sigma2: f64, zeta: f64) -> (f64, f64) {
    let s = b2 + sigma2;
    (zeta.ln() - 0.5 * b2.ln() - 0.5 * a * a / b2, (1.0 - zeta).ln() - 0.5 * s.ln() - 0.5 * a * a / s)
}

/// `Pr(z = 0)` given the conditional moments of one coordinate.
pub fn spike_probability(a: f64, b2: f64, sigma2: f64, zeta: f64) -> f64 {
    let (l0, l1) = indicator_log_weights(a, b2, sigma2, zeta);
    1.0 / (1.0 + (l1 - l0).exp())
}

/// `inner_sweeps` passes over the assets at every time, drawing the
/// indicator and then, if active, the jump size.
#[allow(clippy::too_many_arguments)]
pub fn sample_jumps<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    params: &StateParams,
    zeta: f64,
    slab_var: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    inner_sweeps: usize,
    indicator: &mut DMatrix<bool>,
    jumps: &mut DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let reg = ConditionalRegression::new(&params.gamma)?;
    let n = x.nrows();
    for c in 0..jumps.ncols() {
        let v = x.column(c + 1) - x.column(c) - &params.drift;
        let mut j = jumps.column(c).into_owned();
        for _ in 0..inner_sweeps {
            for i in 0..n {
                if !mask[(i, c)] {
                    indicator[(i, c)] = false;
                    j[i] = 0.0;
                    continue;
                }
                let a = reg.cond_mean(i, &v, &j);
                let b2 = reg.cond_var(i);
                let s2 = slab_var[(i, c)];
                let p0 = spike_probability(a, b2, s2, zeta);
                if rng.random::<f64>() < p0 {
                    indicator[(i, c)] = false;
                    j[i] = 0.0;
                } else {
                    indicator[(i, c)] = true;
                    let sd = (b2 * s2 / (b2 + s2)).sqrt();
                    let e: f64 = rng.sample(StandardNormal);
                    j[i] = slab_shrink(a, b2, s2) + sd * e;
                }
            }
        }
        jumps.set_column(c, &j);
    }
    Ok(())
}

/// `Σ r(t) r(t)ᵀ` with `r(t) = X(t) − X(t−1) − D − J(t)`.
pub fn residual_scatter(x: &DMatrix<f64>, drift: &DVector<f64>, jumps: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut s = DMatrix::zeros(n, n);
    for t in 1..x.ncols() {
        let r = x.column(t) - x.column(t - 1) - drift - jumps.column(t - 1);
        s.ger(1.0, &r, &r, 1.0);
    }
    symmetrized(s)
}

/// `D | X, J, Γ ~ N(F(σ_D⁻²D̄ + Γ⁻¹g), F)`, `F = ((T−1)Γ⁻¹ + σ_D⁻²I)⁻¹`.
pub fn sample_drift<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    jumps: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = x.nrows();
    let gp = spd_inverse(gamma, "gamma")?;
    let mut g = DVector::zeros(n);
    for t in 1..x.ncols() {
        g += x.column(t) - x.column(t - 1) - jumps.column(t - 1);
    }
    let s = 1.0 / hyper.drift_var;
    let prec = &gp * (x.ncols() - 1) as f64 + DMatrix::identity(n, n) * s;
    let b = &hyper.drift_mean * s + gp * g;
    Ok(PrecisionDraw::new(prec, "drift precision")?.draw(&b, rng))
}

/// Draws `Γ ~ IW(W_o + S, η + T − 1)`; also returns `W_o + S`.
pub fn sample_gamma<R: Rng + ?Sized>(
    scatter: &DMatrix<f64>,
    n_steps: usize,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let psi = symmetrized(&hyper.wishart_scale + scatter);
    let dof = hyper.wishart_dof + n_steps as f64;
    let draw = match inverse_wishart(rng, &psi, dof) {
        Ok(g) => g,
        Err(Error::NotPositiveDefinite(_)) => inverse_wishart(rng, &symmetrized(psi.clone()), dof)?,
        Err(e) => return Err(e),
    };
    Ok((draw, psi))
}

/// `σ_o,ᵢ² ~ IG(α_o + T/2, β_o + ½ Σₜ (y_totᵢ(t) − Xᵢ(t))²)`.
pub fn sample_obs_var<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y_tot: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        let ss: f64 = (0..x.ncols()).map(|t| (y_tot[(i, t)] - x[(i, t)]).powi(2)).sum();
        out[i] = inverse_gamma(rng, hyper.obs_shape + 0.5 * x.ncols() as f64, hyper.obs_scale + 0.5 * ss)?;
    }
    Ok(out)
}

/// `ζ ~ Beta(α_ζ + N_Z, β_ζ + N_J)` over the entries that can jump.
pub fn sample_spike_prob<R: Rng + ?Sized>(
    indicator: &DMatrix<bool>,
    mask: &DMatrix<bool>,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<f64> {
    let (mut nz, mut nj) = (0.0, 0.0);
    for (z, m) in indicator.iter().zip(mask.iter()) {
        if *m {
            if *z {
                nj += 1.0;
            } else {
                nz += 1.0;
            }
        }
    }
    let beta = Beta::new(hyper.spike_alpha + nz, hyper.spike_beta + nj).map_err(|e| Error::invalid(e.to_string()))?;
    // keep strictly inside (0, 1) so the logs stay finite
    Ok(beta.sample(rng).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
}

/// `σⱼ²ᵢ(t) ~ IG(α_j + Zᵢ(t)/2, β_j + Jᵢ(t)²/2)`.
pub fn sample_slab_var<R: Rng + ?Sized>(
    jumps: &DMatrix<f64>,
    indicator: &DMatrix<bool>,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(jumps.nrows(), jumps.ncols());
    for c in 0..jumps.ncols() {
        for i in 0..jumps.nrows() {
            let z = if indicator[(i, c)] { 0.5 } else { 0.0 };
            out[(i, c)] = inverse_gamma(rng, hyper.slab_shape + z, hyper.slab_scale + 0.5 * jumps[(i, c)].powi(2))?;
        }
    }
    Ok(out)
}

/// `log p(y_tot, X, J, θ)` up to a constant, with the standard conjugate
/// prior densities.
pub fn complete_log_density(state: &GibbsState, mask: &DMatrix<bool>, hyper: &Hyperparameters) -> Result<f64> {
    let p = &state.params;
    let (n, t_len) = state.x.shape();
    let mut lp = 0.0;
    for i in 0..n {
        let v = p.obs_var[i];
        let ss: f64 = (0..t_len).map(|t| (state.y_tot[(i, t)] - state.x[(i, t)]).powi(2)).sum();
        lp += -0.5 * t_len as f64 * v.ln() - 0.5 * ss / v;
        lp += -(hyper.obs_shape + 1.0) * v.ln() - hyper.obs_scale / v;
    }
    let gchol = cholesky(&p.gamma, "gamma")?;
    let ld = crate::linalg::log_det(&gchol);
    let scatter = residual_scatter(&state.x, &p.drift, &state.jumps);
    lp += -0.5 * (t_len - 1) as f64 * ld - 0.5 * gchol.solve(&scatter).trace();
    lp += -0.5 * (hyper.wishart_dof + n as f64 + 1.0) * ld - 0.5 * gchol.solve(&hyper.wishart_scale).trace();
    let kchol = cholesky(&p.init_cov, "init_cov")?;
    let d0 = state.x.column(0) - &p.init_mean;
    lp += -0.5 * crate::linalg::log_det(&kchol) - 0.5 * d0.dot(&kchol.solve(&d0));
    lp += -0.5 * (&p.drift - &hyper.drift_mean).norm_squared() / hyper.drift_var;
    let z = state.spike_prob;
    lp += (hyper.spike_alpha - 1.0) * z.ln() + (hyper.spike_beta - 1.0) * (1.0 - z).ln();
    for c in 0..state.jumps.ncols() {
        for i in 0..n {
            let s2 = state.slab_var[(i, c)];
            lp += -(hyper.slab_shape + 1.0) * s2.ln() - hyper.slab_scale / s2;
            if !mask[(i, c)] {
                continue;
            }
            if state.indicator[(i, c)] {
                let j = state.jumps[(i, c)];
                lp += (1.0 - z).ln() - 0.5 * s2.ln() - 0.5 * j * j / s2;
            } else {
                lp += z.ln();
            }
        }
    }
    Ok(lp)
}

/// One full sweep. Returns `W_o + S` from the `Γ` step.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut GibbsState,
    panel: &ObservationPanel,
    mask: &DMatrix<bool>,
    hyper: &Hyperparameters,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let f = &config.freeze;
    if !f.missing {
        state.y_tot = sample_missing_obs(&state.x, &state.params.obs_var, panel, rng);
    }
    if !f.states {
        sample_states(&mut state.x, &state.y_tot, &state.params, &state.jumps, rng)?;
    }
    if !f.jumps {
        sample_jumps(
            &state.x,
            &state.params,
            state.spike_prob,
            &state.slab_var,
            mask,
            config.inner_sweeps,
            &mut state.indicator,
            &mut state.jumps,
            rng,
        )?;
    }
    if !f.drift {
        state.params.drift = sample_drift(&state.x, &state.jumps, &state.params.gamma, hyper, rng)?;
    }
    let scatter = residual_scatter(&state.x, &state.params.drift, &state.jumps);
    let (draw, psi) = sample_gamma(&scatter, state.x.ncols() - 1, hyper, rng)?;
    if !f.gamma {
        state.params.gamma = draw;
    }
    if !f.obs_var {
        state.params.obs_var = sample_obs_var(&state.x, &state.y_tot, hyper, rng)?;
    }
    if !f.spike_prob {
        state.spike_prob = sample_spike_prob(&state.indicator, mask, hyper, rng)?;
    }
    if !f.slab_var {
        state.slab_var = sample_slab_var(&state.jumps, &state.indicator, hyper, rng)?;
    }
    Ok(psi)
}

/// Starting state from a KECM estimate: its parameters and jumps, with the
/// smoothed means as states.
pub fn initial_state(panel: &ObservationPanel, hyper: &Hyperparameters, init: &EstimationReport) -> Result<GibbsState> {
    let (n, t_len) = (panel.n_assets(), panel.n_times());
    let params = init.params.clone();
    let (indicator, jumps, spike_prob, slab_var) = match &init.jumps {
        JumpEstimate::SpikeSlab(s) => (s.indicator.clone(), s.jumps.clone(), s.spike_prob, s.slab_var.clone()),
        JumpEstimate::Laplace(s) => (
            s.jumps.map(|v| v != 0.0),
            s.jumps.clone(),
            hyper.spike_mean(),
            DMatrix::from_element(n, t_len - 1, hyper.slab_var_mode()),
        ),
        JumpEstimate::None => {
            let s = SpikeSlabJumpState::initial(&panel.jump_mask(), hyper);
            (s.indicator, s.jumps, s.spike_prob, s.slab_var)
        }
    };
    let moments = smooth(panel, &params, &jumps)?;
    let x = DMatrix::from_fn(n, t_len, |i, t| moments.smoothed_mean[t][i]);
    let y_tot = DMatrix::from_fn(n, t_len, |i, t| panel.value(t, i).unwrap_or(x[(i, t)]));
    Ok(GibbsState { x, y_tot, indicator, jumps, params, spike_prob, slab_var })
}

fn non_finite(state: &GibbsState) -> bool {
    state.x.iter().any(|v| !v.is_finite())
        || state.params.gamma.iter().any(|v| !v.is_finite())
        || state.params.drift.iter().any(|v| !v.is_finite())
        || state.params.obs_var.iter().any(|v| !v.is_finite() || *v <= 0.0)
        || state.jumps.iter().any(|v| !v.is_finite())
}

/// Runs the chain from an explicit state.
pub fn run_chain(
    panel: &ObservationPanel,
    hyper: &Hyperparameters,
    config: &GibbsConfig,
    mut state: GibbsState,
) -> Result<GibbsChain> {
    config.validate()?;
    let mut rng = seeded_rng(config.seed, 0);
    let mask = panel.jump_mask();
    let n = panel.n_assets();
    let steps = panel.n_times() - 1;
    let rb_denom = hyper.wishart_dof + steps as f64 - n as f64 - 1.0;
    let rao_blackwell = rb_denom > 0.0;
    let zero = DMatrix::zeros(n, n);
    let (mut s1, mut s2, mut c1, mut c2) = (zero.clone(), zero.clone(), zero.clone(), zero);
    let mut rows = Vec::with_capacity(config.n_samples - config.burn_in);
    let mut gamma_samples = Vec::new();
    let mut cond_means = Vec::new();

    for sweep_idx in 1..=config.n_samples {
        let psi = sweep(&mut state, panel, &mask, hyper, config, &mut rng)?;
        if non_finite(&state) {
            return Err(Error::NonFinite { context: "gibbs sweep".into(), step: sweep_idx });
        }
        if sweep_idx <= config.burn_in {
            continue;
        }
        let g = &state.params.gamma;
        let cm = if rao_blackwell { &psi / rb_denom } else { g.clone() };
        s1 += g;
        s2 += g.component_mul(g);
        c1 += &cm;
        c2 += cm.component_mul(&cm);
        if config.keep_samples {
            gamma_samples.push(g.clone());
            cond_means.push(cm);
        }
        rows.push(ChainRow {
            sweep: sweep_idx,
            log_density: complete_log_density(&state, &mask, hyper)?,
            spike_prob: state.spike_prob,
            gamma_trace: g.trace(),
        });
    }
    let k = rows.len() as f64;
    let var = |s1: &DMatrix<f64>, s2: &DMatrix<f64>| {
        let m = s1 / k;
        (s2 / k - m.component_mul(&m)) * (k / (k - 1.0).max(1.0))
    };
    let sample_mean = &s1 / k;
    let rb_mean = if rao_blackwell { &c1 / k } else { sample_mean.clone() };
    if !rao_blackwell {
        log::warn!("eta + T - 1 <= N + 1: using the raw sample average of gamma");
    }
    Ok(GibbsChain {
        rows,
        sample_var: var(&s1, &s2),
        rb_var: var(&c1, &c2),
        sample_mean,
        rb_mean: symmetrized(rb_mean),
        rao_blackwell,
        gamma_samples,
        cond_means,
        final_state: state,
    })
}

/// Full sampler started from `init`, reporting the Rao-Blackwell mean of `Γ`.
pub fn run_gibbs(
    panel: &ObservationPanel,
    hyper: &Hyperparameters,
    config: &GibbsConfig,
    init: &EstimationReport,
) -> Result<(EstimationReport, GibbsChain)> {
    check_inputs(panel, hyper, &KecmRunConfig::default())?;
    let start = Instant::now();
    let state = initial_state(panel, hyper, init)?;
    let chain = run_chain(panel, hyper, config, state)?;
    let last = &chain.final_state;
    let params = StateParams { gamma: chain.rb_mean.clone(), ..last.params.clone() };
    let jumps = JumpEstimate::SpikeSlab(SpikeSlabJumpState {
        indicator: last.indicator.clone(),
        slab: last.jumps.clone(),
        jumps: last.jumps.clone(),
        spike_prob: last.spike_prob,
        slab_var: last.slab_var.clone(),
    });
    let lp = log_posterior(panel, &params, jumps.as_prior(), hyper)?;
    let mut notes = Vec::new();
    if !chain.rao_blackwell {
        notes.push("gamma is the raw sample average (too few times for the conditional mean)".to_string());
    }
    let report = EstimationReport {
        method: Method::Gibbs,
        params,
        jumps,
        iterations: chain.rows.len(),
        converged: true,
        log_posterior: lp,
        trace: Vec::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
        notes,
    };
    Ok((report, chain))
}
