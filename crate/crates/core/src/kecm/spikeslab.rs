//! Spike-and-slab jump prior: threshold-then-shrink coordinate descent for
//! the jumps and conditional updates of `ζ` and the slab variances.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{
    check_inputs, initial_params, run_driver, EstimationReport, JumpBlock, JumpEstimate, JumpPrior, JumpStepContext,
    KecmRunConfig, Method,
};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, ConditionalRegression};
use crate::model::{Hyperparameters, ObservationPanel, SpikeSlabJumpState, StateParams};

/// Conditional mean `a(i)` and variance `b²(i)` of coordinate `i` of
/// `Δ + V`, `V ~ N(0, Γ)`, given the other coordinates equal `j`.
pub fn conditional_ab(gamma: &DMatrix<f64>, delta: &DVector<f64>, j: &DVector<f64>, i: usize) -> Result<(f64, f64)> {
    if i >= gamma.nrows() {
        return Err(Error::invalid(format!("coordinate {} out of range", i + 1)));
    }
    let reg = ConditionalRegression::new(gamma)?;
    Ok((reg.cond_mean(i, delta, j), reg.cond_var(i)))
}

/// `T = (log(ζ/(1−ζ)) + ½ log((b²+σ²)/b²)) · 2b²(b²+σ²)/σ²`; the spike wins
/// when `a² < T`.
pub fn spike_threshold(b2: f64, sigma2: f64, zeta: f64) -> f64 {
    let log_odds = (zeta / (1.0 - zeta)).ln() + 0.5 * ((b2 + sigma2) / b2).ln();
    log_odds * 2.0 * b2 * (b2 + sigma2) / sigma2
}

/// `ζ N(0; a, b²) ≥ (1−ζ) N(0; a, b²+σ²)`, compared on the log scale. Ties
/// go to the spike.
pub fn spike_wins(a: f64, b2: f64, sigma2: f64, zeta: f64) -> bool {
    let s = b2 + sigma2;
    let spike = zeta.ln() - 0.5 * b2.ln() - 0.5 * a * a / b2;
    let slab = (1.0 - zeta).ln() - 0.5 * s.ln() - 0.5 * a * a / s;
    spike >= slab
}

/// Slab value `a / (1 + b²/σ²)`, the conditional mode of an active jump.
pub fn slab_shrink(a: f64, b2: f64, sigma2: f64) -> f64 {
    a / (1.0 + b2 / sigma2)
}

pub fn spike_slab_shrink(a: f64, b2: f64, sigma2: f64, zeta: f64) -> f64 {
    if spike_wins(a, b2, sigma2, zeta) {
        0.0
    } else {
        slab_shrink(a, b2, sigma2)
    }
}

/// Per-coordinate penalty of an active jump relative to an inactive one,
/// excluding the quadratic slab term.
fn activation_cost(b2: f64, sigma2: f64, zeta: f64) -> f64 {
    (zeta / (1.0 - zeta)).ln() + 0.5 * (1.0 + sigma2 / b2).ln()
}

/// Objective minimized by [`coordinate_descent_jumps`]:
///
/// `½ (j−Δ)ᵀΓ⁻¹(j−Δ) + Σᵢ zᵢ (log(ζ/(1−ζ)) + ½ log(1 + σᵢ²/b²(i)) + jᵢ²/(2σᵢ²))`
///
/// over observed coordinates, up to a constant. Minimizing over `(zᵢ, jᵢ)`
/// with the rest fixed gives exactly [`spike_slab_shrink`].
pub fn spike_objective(
    gamma: &DMatrix<f64>,
    delta: &DVector<f64>,
    zeta: f64,
    slab_var: &DVector<f64>,
    z: &[bool],
    j: &DVector<f64>,
) -> Result<f64> {
    let reg = ConditionalRegression::new(gamma)?;
    let r = j - delta;
    let mut f = 0.5 * r.dot(&cholesky(gamma, "gamma")?.solve(&r));
    for i in 0..j.len() {
        if z[i] {
            f += activation_cost(reg.cond_var(i), slab_var[i], zeta) + 0.5 * j[i] * j[i] / slab_var[i];
        }
    }
    Ok(f)
}

/// Result of one jump solve at a single time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSlabSolution {
    pub indicator: Vec<bool>,
    /// Conditional slab mode for every coordinate, active or not.
    pub slab: DVector<f64>,
    pub jumps: DVector<f64>,
}

/// `cycles` ascending sweeps of threshold-then-shrink updates. Coordinates
/// with `observed[i] == false` stay at zero.
pub fn coordinate_descent_jumps(
    gamma: &DMatrix<f64>,
    delta: &DVector<f64>,
    zeta: f64,
    slab_var: &DVector<f64>,
    observed: &[bool],
    warm_start: &DVector<f64>,
    cycles: usize,
) -> Result<SpikeSlabSolution> {
    let reg = ConditionalRegression::new(gamma)?;
    Ok(cd_with(&reg, delta, zeta, slab_var, observed, warm_start, cycles))
}

pub(crate) fn cd_with(
    reg: &ConditionalRegression,
    delta: &DVector<f64>,
    zeta: f64,
    slab_var: &DVector<f64>,
    observed: &[bool],
    warm_start: &DVector<f64>,
    cycles: usize,
) -> SpikeSlabSolution {
    let n = reg.dim();
    let mut j = warm_start.clone();
    let mut z: Vec<bool> = j.iter().map(|v| *v != 0.0).collect();
    let mut slab = j.clone();
    for _ in 0..cycles {
        let mut changed = false;
        for i in 0..n {
            let (zi, si) = if observed[i] {
                let a = reg.cond_mean(i, delta, &j);
                let b2 = reg.cond_var(i);
                (!spike_wins(a, b2, slab_var[i], zeta), slab_shrink(a, b2, slab_var[i]))
            } else {
                (false, 0.0)
            };
            let ji = if zi { si } else { 0.0 };
            changed |= zi != z[i] || (ji - j[i]).abs() >= 1e-12;
            z[i] = zi;
            slab[i] = si;
            j[i] = ji;
        }
        if !changed {
            break;
        }
    }
    SpikeSlabSolution { indicator: z, slab, jumps: j }
}

/// `ζ = (α_ζ + N_Z) / (n + α_ζ + β_ζ)` with `n` the number of entries that
/// can jump and `N_Z` the zeros among them.
pub fn update_zeta(jumps: &DMatrix<f64>, mask: &DMatrix<bool>, hyper: &Hyperparameters) -> f64 {
    let mut n = 0usize;
    let mut zeros = 0usize;
    for (j, m) in jumps.iter().zip(mask.iter()) {
        if *m {
            n += 1;
            if *j == 0.0 {
                zeros += 1;
            }
        }
    }
    (hyper.spike_alpha + zeros as f64) / (n as f64 + hyper.spike_alpha + hyper.spike_beta)
}

/// `σⱼ²ᵢ(t) = (β_j + ½Jᵢ(t)²) / (α_j + 1 + ½Zᵢ(t))`.
pub fn update_sigma_j(jumps: &DMatrix<f64>, indicator: &DMatrix<bool>, hyper: &Hyperparameters) -> DMatrix<f64> {
    DMatrix::from_fn(jumps.nrows(), jumps.ncols(), |i, c| {
        let z = if indicator[(i, c)] { 1.0 } else { 0.0 };
        (hyper.slab_scale + 0.5 * jumps[(i, c)].powi(2)) / (hyper.slab_shape + 1.0 + 0.5 * z)
    })
}

/// One entry's share of [`log_prior`] as a function of its slab variance.
fn slab_var_objective(s2: f64, active: bool, j: f64, b2: f64, hyper: &Hyperparameters) -> f64 {
    let mut v = -(hyper.slab_shape + 1.0) * s2.ln() - hyper.slab_scale / s2;
    if active {
        v -= 0.5 * (1.0 + s2 / b2).ln() + 0.5 * j * j / s2;
    }
    v
}

/// The closed-form slab variance is exact for inactive entries; for active
/// ones the activation cost also depends on `σ²`, so the update is accepted
/// only as far as it does not lower that entry's objective.
fn guarded_slab_var(proposal: f64, old: f64, active: bool, j: f64, b2: f64, hyper: &Hyperparameters) -> f64 {
    if !active {
        return proposal;
    }
    let base = slab_var_objective(old, active, j, b2, hyper);
    let mut step = 1.0;
    for _ in 0..30 {
        let s2 = old + (proposal - old) * step;
        if slab_var_objective(s2, active, j, b2, hyper) >= base {
            return s2;
        }
        step *= 0.5;
    }
    old
}

/// Log prior of the spike-and-slab block up to a constant: active entries
/// pay the activation cost and slab term of [`spike_objective`], `ζ` has
/// the kernel `α_ζ log ζ + β_ζ log(1−ζ)` and each slab variance an inverse
/// gamma kernel.
pub fn log_prior(
    state: &SpikeSlabJumpState,
    reg: &ConditionalRegression,
    mask: &DMatrix<bool>,
    hyper: &Hyperparameters,
) -> f64 {
    let zeta = state.spike_prob;
    let mut lp = hyper.spike_alpha * zeta.ln() + hyper.spike_beta * (1.0 - zeta).ln();
    for c in 0..state.jumps.ncols() {
        for i in 0..state.jumps.nrows() {
            let s2 = state.slab_var[(i, c)];
            lp += -(hyper.slab_shape + 1.0) * s2.ln() - hyper.slab_scale / s2;
            if !mask[(i, c)] {
                continue;
            }
            lp += zeta.ln();
            if state.indicator[(i, c)] {
                let j = state.jumps[(i, c)];
                lp -= activation_cost(reg.cond_var(i), s2, zeta) + 0.5 * j * j / s2;
            }
        }
    }
    lp
}

struct SpikeSlabBlock(SpikeSlabJumpState);

impl JumpBlock for SpikeSlabBlock {
    fn jumps(&self) -> &DMatrix<f64> {
        &self.0.jumps
    }

    fn m_step(&mut self, ctx: &JumpStepContext<'_>) -> Result<()> {
        let state = &self.0;
        let sols: Vec<SpikeSlabSolution> = (0..state.jumps.ncols())
            .into_par_iter()
            .map(|c| {
                let observed: Vec<bool> = ctx.mask.column(c).iter().copied().collect();
                let s2 = state.slab_var.column(c).into_owned();
                let warm = state.jumps.column(c).into_owned();
                cd_with(ctx.reg, &ctx.increments[c], state.spike_prob, &s2, &observed, &warm, ctx.cycles)
            })
            .collect();
        let st = &mut self.0;
        for (c, sol) in sols.into_iter().enumerate() {
            for i in 0..st.jumps.nrows() {
                st.indicator[(i, c)] = sol.indicator[i];
            }
            st.slab.set_column(c, &sol.slab);
            st.jumps.set_column(c, &sol.jumps);
        }
        st.spike_prob = update_zeta(&st.jumps, ctx.mask, ctx.hyper);
        let proposal = update_sigma_j(&st.jumps, &st.indicator, ctx.hyper);
        for c in 0..st.jumps.ncols() {
            for i in 0..st.jumps.nrows() {
                let active = ctx.mask[(i, c)] && st.indicator[(i, c)];
                let b2 = ctx.reg.cond_var(i);
                st.slab_var[(i, c)] =
                    guarded_slab_var(proposal[(i, c)], st.slab_var[(i, c)], active, st.jumps[(i, c)], b2, ctx.hyper);
            }
        }
        Ok(())
    }

    fn gamma_terms(&self, reg: &ConditionalRegression, mask: &DMatrix<bool>) -> Option<f64> {
        let st = &self.0;
        let mut sum = 0.0;
        for c in 0..st.jumps.ncols() {
            for i in 0..st.jumps.nrows() {
                if mask[(i, c)] && st.indicator[(i, c)] {
                    sum -= 0.5 * (1.0 + st.slab_var[(i, c)] / reg.cond_var(i)).ln();
                }
            }
        }
        Some(sum)
    }

    fn prior(&self) -> JumpPrior<'_> {
        JumpPrior::SpikeSlab(&self.0)
    }

    fn into_estimate(self) -> JumpEstimate {
        JumpEstimate::SpikeSlab(self.0)
    }
}

pub fn run_kecm_spikeslab(
    panel: &ObservationPanel,
    hyper: &Hyperparameters,
    config: &KecmRunConfig,
) -> Result<EstimationReport> {
    check_inputs(panel, hyper, config)?;
    let params = initial_params(panel, hyper)?;
    run_kecm_spikeslab_from(panel, hyper, config, params)
}

pub fn run_kecm_spikeslab_from(
    panel: &ObservationPanel,
    hyper: &Hyperparameters,
    config: &KecmRunConfig,
    params: StateParams,
) -> Result<EstimationReport> {
    check_inputs(panel, hyper, config)?;
    let state = SpikeSlabJumpState::initial(&panel.jump_mask(), hyper);
    run_driver(Method::KecmSpikeslab, panel, hyper, config, params, SpikeSlabBlock(state))
}
