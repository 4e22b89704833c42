//! Synthetic panels: factor-model covariances, jump-diffusion and
//! GARCH(1,1)-jump paths, volume-coupled asynchronous trading and
//! microstructure noise.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrized};
use crate::model::{ObservationPanel, DAILY_VAR_PER_STEP};
use crate::random::{seeded_rng, standard_normal_vec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Stationary,
    /// Noise variance `(0.1·innov²/Γᵢᵢ + 0.9)·σ̃ᵢ²`.
    Stochastic,
}

/// How `ν` in the trading probability `|innov|/(|innov| + ν)` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuMode {
    /// `ν = √(2Γ/π)(1/p_obs − 1)`: a typical innovation trades with
    /// probability `p_obs`.
    Calibrated,
    /// `ν = (√(2Γ)/π)(1/p_obs − 1)`: the alternative scaling, kept for comparison.
    PiScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarchSpec {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_assets: usize,
    pub n_times: usize,
    pub n_factors: usize,
    pub factor_shape: f64,
    /// Mean loading variance of the market factor.
    pub market_factor_mean: f64,
    /// Mean loading variance of each other factor.
    pub other_factor_mean: f64,
    /// Ridge `ε` added to the factor covariance.
    pub eps: f64,
    pub drift_sd: f64,
    pub obs_noise_shape: f64,
    pub obs_noise_mean: f64,
    pub noise_mode: NoiseMode,
    /// Probability of no jump.
    pub zeta: f64,
    pub slab_var: f64,
    pub garch: Option<GarchSpec>,
    pub p_obs: f64,
    pub nu_mode: NuMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_assets: 10,
            n_times: 900,
            n_factors: 5,
            factor_shape: 2.0,
            market_factor_mean: 0.7 * DAILY_VAR_PER_STEP,
            other_factor_mean: 0.3 / 4.0 * DAILY_VAR_PER_STEP,
            eps: DAILY_VAR_PER_STEP / 100.0,
            drift_sd: 0.01 / 23400.0,
            obs_noise_shape: 2.0,
            obs_noise_mean: 0.0002 * 0.0002,
            noise_mode: NoiseMode::Stationary,
            zeta: 1.0,
            slab_var: 1e-4,
            garch: None,
            p_obs: 0.3,
            nu_mode: NuMode::Calibrated,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_assets == 0 || self.n_times < 2 {
            return Err(Error::invalid("simulation needs N >= 1 and T >= 2"));
        }
        if self.n_factors == 0 {
            return Err(Error::invalid("n_factors must be at least 1"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::invalid("zeta must be in (0, 1]"));
        }
        if !(self.p_obs > 0.0 && self.p_obs < 1.0) {
            return Err(Error::invalid("p_obs must be in (0, 1)"));
        }
        if self.slab_var < 0.0 || self.obs_noise_mean < 0.0 || self.drift_sd < 0.0 {
            return Err(Error::invalid("variances must be non-negative"));
        }
        if !(self.factor_shape > 0.0 && self.obs_noise_shape > 0.0) {
            return Err(Error::invalid("gamma shapes must be positive"));
        }
        if let Some(g) = self.garch {
            if g.a < 0.0 || g.b < 0.0 || g.a + g.b >= 1.0 {
                return Err(Error::invalid("GARCH needs a, b >= 0 and a + b < 1"));
            }
        }
        Ok(())
    }
}

/// Everything generated, kept for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub gamma: DMatrix<f64>,
    pub drift: DVector<f64>,
    /// Stationary noise variances, or the base `σ̃²` in stochastic mode.
    pub obs_var: DVector<f64>,
    /// `N × T` latent log prices.
    pub x: DMatrix<f64>,
    /// `N × (T−1)` jumps; column `c` is time `c + 1`.
    pub jumps: DMatrix<f64>,
    pub indicator: DMatrix<bool>,
    /// GARCH variances `h(t)`, `N × T`.
    pub h: Option<DMatrix<f64>>,
    pub forced_observations: usize,
}

/// Latent path with its jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub x: DMatrix<f64>,
    pub jumps: DMatrix<f64>,
    pub indicator: DMatrix<bool>,
    pub h: Option<DMatrix<f64>>,
}

fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64, mean: f64) -> Result<f64> {
    if mean == 0.0 {
        return Ok(0.0);
    }
    Ok(Gamma::new(shape, mean / shape).map_err(|e| Error::invalid(e.to_string()))?.sample(rng))
}

/// `Γ = Σ βₖ vₖvₖᵀ + εI` with a market factor `v₁ ~ N(1/√2·1, ½I)`.
pub fn gen_factor_covariance<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<DMatrix<f64>> {
    let n = cfg.n_assets;
    let mut g = DMatrix::identity(n, n) * cfg.eps;
    for k in 0..cfg.n_factors {
        let v = if k == 0 {
            standard_normal_vec(rng, n) * 0.5f64.sqrt() + DVector::from_element(n, 0.5f64.sqrt())
        } else {
            standard_normal_vec(rng, n)
        };
        let mean = if k == 0 { cfg.market_factor_mean } else { cfg.other_factor_mean };
        let beta = gamma_draw(rng, cfg.factor_shape, mean)?;
        g.ger(beta, &v, &v, 1.0);
    }
    Ok(symmetrized(g))
}

fn draw_jumps<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<(DMatrix<f64>, DMatrix<bool>)> {
    let (n, m) = (cfg.n_assets, cfg.n_times - 1);
    let coin = Bernoulli::new(1.0 - cfg.zeta).map_err(|e| Error::invalid(e.to_string()))?;
    let slab = Normal::new(0.0, cfg.slab_var.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut jumps = DMatrix::zeros(n, m);
    let mut z = DMatrix::from_element(n, m, false);
    for c in 0..m {
        for i in 0..n {
            let on = coin.sample(rng);
            let size = slab.sample(rng);
            if on {
                z[(i, c)] = true;
                jumps[(i, c)] = size;
            }
        }
    }
    Ok((jumps, z))
}

/// `X(t) = X(t−1) + D + J(t) + V(t)`, `V ~ N(0, Γ)`, from `X(1) = 0`.
pub fn simulate_jump_diffusion<R: Rng + ?Sized>(
    cfg: &SimConfig,
    gamma: &DMatrix<f64>,
    drift: &DVector<f64>,
    rng: &mut R,
) -> Result<Path> {
    let n = cfg.n_assets;
    let lower = cholesky(gamma, "gamma")?.l();
    let (jumps, indicator) = draw_jumps(cfg, rng)?;
    let mut x = DMatrix::zeros(n, cfg.n_times);
    for t in 1..cfg.n_times {
        let v = &lower * standard_normal_vec(rng, n);
        let next = x.column(t - 1) + drift + jumps.column(t - 1) + v;
        x.set_column(t, &next);
    }
    Ok(Path { x, jumps, indicator, h: None })
}

/// GARCH(1,1) volatilities with constant correlations `Γᵢⱼ/√(ΓᵢᵢΓⱼⱼ)`:
/// `hᵢ(t+1) = b hᵢ(t) + a (Xᵢ(t) − Xᵢ(t−1) − Dᵢ)² + Γᵢᵢ(1 − a − b)`.
pub fn simulate_garch_jump<R: Rng + ?Sized>(
    cfg: &SimConfig,
    garch: GarchSpec,
    gamma: &DMatrix<f64>,
    drift: &DVector<f64>,
    rng: &mut R,
) -> Result<Path> {
    let n = cfg.n_assets;
    let sd = DVector::from_fn(n, |i, _| gamma[(i, i)].sqrt());
    let corr = DMatrix::from_fn(n, n, |i, j| gamma[(i, j)] / (sd[i] * sd[j]));
    let lower = cholesky(&corr, "correlation")?.l();
    let (jumps, indicator) = draw_jumps(cfg, rng)?;
    let mut x = DMatrix::zeros(n, cfg.n_times);
    let mut h = DMatrix::zeros(n, cfg.n_times);
    for i in 0..n {
        h[(i, 0)] = gamma[(i, i)];
    }
    for t in 1..cfg.n_times {
        let v = &lower * standard_normal_vec(rng, n);
        for i in 0..n {
            let innov = h[(i, t - 1)].sqrt() * v[i] + jumps[(i, t - 1)];
            x[(i, t)] = x[(i, t - 1)] + drift[i] + innov;
            let c = gamma[(i, i)] * (1.0 - garch.a - garch.b);
            h[(i, t)] = garch.b * h[(i, t - 1)] + garch.a * innov * innov + c;
        }
    }
    Ok(Path { x, jumps, indicator, h: Some(h) })
}

/// `ν` for asset variance `g`.
pub fn nu(g: f64, p_obs: f64, mode: NuMode) -> f64 {
    let typical = match mode {
        NuMode::Calibrated => (2.0 * g / PI).sqrt(),
        NuMode::PiScaled => (2.0 * g).sqrt() / PI,
    };
    typical * (1.0 / p_obs - 1.0)
}

/// `|innov| / (|innov| + ν)`.
pub fn trade_probability(innov: f64, nu: f64) -> f64 {
    let a = innov.abs();
    if a == 0.0 {
        0.0
    } else {
        a / (a + nu)
    }
}

/// Trades happen with a probability that grows with the absolute
/// innovation; every asset trades at the first time.
pub fn observation_mask<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    drift: &DVector<f64>,
    gamma: &DMatrix<f64>,
    p_obs: f64,
    mode: NuMode,
    rng: &mut R,
) -> DMatrix<bool> {
    let (n, t_len) = x.shape();
    let mut mask = DMatrix::from_element(n, t_len, false);
    for i in 0..n {
        mask[(i, 0)] = true;
    }
    for t in 1..t_len {
        for i in 0..n {
            let innov = x[(i, t)] - x[(i, t - 1)] - drift[i];
            let p = trade_probability(innov, nu(gamma[(i, i)], p_obs, mode));
            mask[(i, t)] = rng.random::<f64>() < p;
        }
    }
    mask
}

/// Grants an observation to empty times and to assets never seen after the
/// first time. Returns the number of forced entries.
pub fn force_coverage<R: Rng + ?Sized>(mask: &mut DMatrix<bool>, rng: &mut R) -> usize {
    let (n, t_len) = mask.shape();
    let mut forced = 0;
    for t in 0..t_len {
        if !mask.column(t).iter().any(|m| *m) {
            let i = rng.random_range(0..n);
            mask[(i, t)] = true;
            forced += 1;
            log::info!("forced an observation of asset {} at empty time t={}", i + 1, t + 1);
        }
    }
    if t_len > 1 {
        for i in 0..n {
            if !(1..t_len).any(|t| mask[(i, t)]) {
                let t = rng.random_range(1..t_len);
                mask[(i, t)] = true;
                forced += 1;
                log::info!("forced an observation of unseen asset {} at t={}", i + 1, t + 1);
            }
        }
    }
    forced
}

/// Observed prices `y = x + w` on the masked entries.
pub fn apply_microstructure_noise<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    noise_var: &DVector<f64>,
    mode: NoiseMode,
    gamma: &DMatrix<f64>,
    drift: &DVector<f64>,
    rng: &mut R,
) -> Result<ObservationPanel> {
    let (n, t_len) = x.shape();
    let mut obs = vec![Vec::new(); t_len];
    for (t, row) in obs.iter_mut().enumerate() {
        for i in 0..n {
            let w: f64 = rng.sample(StandardNormal);
            if !mask[(i, t)] {
                continue;
            }
            let var = match mode {
                NoiseMode::Stationary => noise_var[i],
                NoiseMode::Stochastic if t > 0 => {
                    let innov = x[(i, t)] - x[(i, t - 1)] - drift[i];
                    stochastic_noise_var(innov, gamma[(i, i)], noise_var[i])
                }
                NoiseMode::Stochastic => noise_var[i],
            };
            row.push((i, x[(i, t)] + var.sqrt() * w));
        }
    }
    ObservationPanel::new(n, obs)
}

/// `(0.1·innov²/Γᵢᵢ + 0.9)·σ̃²`.
pub fn stochastic_noise_var(innov: f64, gamma_ii: f64, base: f64) -> f64 {
    (0.1 * innov * innov / gamma_ii + 0.9) * base
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub truth: GroundTruth,
    pub panel: ObservationPanel,
}

/// Full pipeline for one seed.
pub fn simulate(cfg: &SimConfig, seed: u64) -> Result<Simulation> {
    cfg.validate()?;
    let mut rng = seeded_rng(seed, 0);
    let n = cfg.n_assets;
    let gamma = gen_factor_covariance(cfg, &mut rng)?;
    let drift_dist = Normal::new(0.0, cfg.drift_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let drift = DVector::from_fn(n, |_, _| drift_dist.sample(&mut rng));
    let mut obs_var = DVector::zeros(n);
    for i in 0..n {
        obs_var[i] = gamma_draw(&mut rng, cfg.obs_noise_shape, cfg.obs_noise_mean)?;
    }
    let path = match cfg.garch {
        Some(g) => simulate_garch_jump(cfg, g, &gamma, &drift, &mut rng)?,
        None => simulate_jump_diffusion(cfg, &gamma, &drift, &mut rng)?,
    };
    let mut mask = observation_mask(&path.x, &drift, &gamma, cfg.p_obs, cfg.nu_mode, &mut rng);
    let forced = force_coverage(&mut mask, &mut rng);
    if forced > 0 {
        log::info!("simulation forced {forced} observations to keep the panel valid");
    }
    let panel = apply_microstructure_noise(&path.x, &mask, &obs_var, cfg.noise_mode, &gamma, &drift, &mut rng)?;
    Ok(Simulation {
        truth: GroundTruth {
            gamma,
            drift,
            obs_var,
            x: path.x,
            jumps: path.jumps,
            indicator: path.indicator,
            h: path.h,
            forced_observations: forced,
        },
        panel,
    })
}
