//! Choosing the Laplace rate prior so that it matches a spike-and-slab
//! prior in how often it declares a jump in pure diffusion noise.

use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};

use crate::error::{Error, Result};
use crate::random::{inverse_gamma, seeded_rng};

/// Inverse-gamma `(shape, scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGammaSpec {
    pub shape: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSpec {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationPriors {
    /// Diffusion variance `σ_v²`.
    pub diffusion_var: InverseGammaSpec,
    /// No-jump probability `ζ`.
    pub spike_prob: BetaSpec,
    /// Slab variance `σ_j²`.
    pub slab_var: InverseGammaSpec,
}

impl Default for CalibrationPriors {
    fn default() -> Self {
        Self {
            diffusion_var: InverseGammaSpec { shape: 5.0, scale: 6e-6 },
            spike_prob: BetaSpec { alpha: 5.0, beta: 1.0201 },
            slab_var: InverseGammaSpec { shape: 10.0, scale: 0.0011 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Gamma shape of the fitted rate prior.
    pub lambda_shape: f64,
    /// Gamma rate of the fitted rate prior.
    pub lambda_rate: f64,
    /// `λ′` for each outer draw.
    pub lambdas: Vec<f64>,
    /// Mean no-jump posterior probability for each outer draw.
    pub mean_spike_posterior: Vec<f64>,
}

/// `erf⁻¹` with one Newton step on top of `statrs`, inputs clamped to
/// `[−1+1e-12, 1−1e-12]`.
pub fn inverse_erf(p: f64) -> f64 {
    let p = p.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    let mut x = erf_inv(p);
    let d = 2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp();
    if d > 0.0 {
        x -= (erf(x) - p) / d;
    }
    x
}

/// `Pr(J = 0 | J + V = v)` under a spike at zero (weight `ζ`) and a
/// `N(0, σ_j²)` slab, with `V ~ N(0, σ_v²)`.
pub fn spike_posterior(v: f64, diffusion_var: f64, zeta: f64, slab_var: f64) -> f64 {
    let s = diffusion_var + slab_var;
    // ratio (1−ζ) N(v; 0, s) / (ζ N(v; 0, σ_v²)) on the log scale
    let log_ratio =
        (1.0 - zeta).ln() - zeta.ln() - 0.5 * (s / diffusion_var).ln() + 0.5 * v * v * (1.0 / diffusion_var - 1.0 / s);
    1.0 / (1.0 + log_ratio.exp())
}

/// `λ′ = erf⁻¹(P̄) √(2σ_v²) / σ_v²`: the Laplace rate whose dead zone
/// `|v| < λ′σ_v²` has probability `P̄` under `N(0, σ_v²)`.
pub fn equivalent_rate(mean_spike_posterior: f64, diffusion_var: f64) -> f64 {
    inverse_erf(mean_spike_posterior) * (2.0 * diffusion_var).sqrt() / diffusion_var
}

/// Method-of-moments gamma `(shape, rate)`.
pub fn fit_gamma_moments(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::invalid("need at least two samples to fit a gamma"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) || !(mean > 0.0) {
        return Err(Error::invalid("samples have no spread"));
    }
    Ok((mean * mean / var, mean / var))
}

pub fn calibrate_lambda_prior(
    priors: &CalibrationPriors,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<CalibrationResult> {
    let positive = [
        priors.diffusion_var.shape,
        priors.diffusion_var.scale,
        priors.spike_prob.alpha,
        priors.spike_prob.beta,
        priors.slab_var.shape,
        priors.slab_var.scale,
    ];
    if positive.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("all prior parameters must be positive"));
    }
    if n_inner == 0 {
        return Err(Error::invalid("n_inner must be at least 1"));
    }
    let beta = Beta::new(priors.spike_prob.alpha, priors.spike_prob.beta).map_err(|e| Error::invalid(e.to_string()))?;
    let mut lambdas = Vec::with_capacity(n_outer);
    let mut means = Vec::with_capacity(n_outer);
    for k in 0..n_outer {
        let mut rng = seeded_rng(seed, k as u64);
        let sv = inverse_gamma(&mut rng, priors.diffusion_var.shape, priors.diffusion_var.scale)?;
        let zeta: f64 = beta.sample(&mut rng);
        let sj = inverse_gamma(&mut rng, priors.slab_var.shape, priors.slab_var.scale)?;
        let noise = Normal::new(0.0, sv.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
        let p_bar =
            (0..n_inner).map(|_| spike_posterior(noise.sample(&mut rng), sv, zeta, sj)).sum::<f64>() / n_inner as f64;
        let p_bar = p_bar.min(1.0 - 1e-12);
        means.push(p_bar);
        lambdas.push(equivalent_rate(p_bar, sv));
    }
    let (lambda_shape, lambda_rate) = fit_gamma_moments(&lambdas)?;
    Ok(CalibrationResult { lambda_shape, lambda_rate, lambdas, mean_spike_posterior: means })
}
