//! Kalman filter and Rauch-Tung-Striebel smoother for partially observed
//! random walks with drift and known jumps.
//!
//! The prediction for the first time is exactly `(μ, K)`; from then on
//! `X̄(t|t−1) = X̄(t−1|t−1) + D + J(t)` and `P(t|t−1) = P(t−1|t−1) + Γ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det, symmetrize};
use crate::model::{ObservationPanel, StateParams};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Output of the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub predicted_mean: Vec<DVector<f64>>,
    pub predicted_cov: Vec<DMatrix<f64>>,
    pub filtered_mean: Vec<DVector<f64>>,
    pub filtered_cov: Vec<DMatrix<f64>>,
    /// Kalman gain per time, `N × m_t` over the observed assets.
    pub gains: Vec<DMatrix<f64>>,
    pub observed: Vec<Vec<usize>>,
    /// `log p(y(1:T))` by the prediction-error decomposition.
    pub log_likelihood: f64,
}

/// Means and covariances along the time axis.
pub type MomentPath = (Vec<DVector<f64>>, Vec<DMatrix<f64>>);

/// Filtered, predicted and smoothed moments.
#[derive(Debug, Clone)]
pub struct SmootherMoments {
    pub forward: ForwardPass,
    pub smoothed_mean: Vec<DVector<f64>>,
    pub smoothed_cov: Vec<DMatrix<f64>>,
    /// Entry `c` is `Cov(X(c+1), X(c) | y)`.
    pub lag_one_cov: Vec<DMatrix<f64>>,
    /// Entry `c` is `H(c) = P(c|c) P(c+1|c)⁻¹`; empty for filter-only moments.
    pub backward_gains: Vec<DMatrix<f64>>,
    /// Filter-only moments of `X(c)` given `y(1:c+1)`, the partner of
    /// `X(c+1)` in each transition pair. `None` when smoothed.
    pub pair_previous: Option<MomentPath>,
}

impl SmootherMoments {
    pub fn n_times(&self) -> usize {
        self.smoothed_mean.len()
    }

    pub fn log_likelihood(&self) -> f64 {
        self.forward.log_likelihood
    }

    /// Mean and covariance of `X(c)` paired with `X(c+1)`.
    pub fn previous(&self, c: usize) -> (&DVector<f64>, &DMatrix<f64>) {
        match &self.pair_previous {
            Some((m, p)) => (&m[c], &p[c]),
            None => (&self.smoothed_mean[c], &self.smoothed_cov[c]),
        }
    }
}

fn check_shapes(panel: &ObservationPanel, params: &StateParams, jumps: &DMatrix<f64>) -> Result<()> {
    let n = panel.n_assets();
    if params.n_assets() != n
        || params.gamma.shape() != (n, n)
        || params.init_cov.shape() != (n, n)
        || params.obs_var.len() != n
        || params.init_mean.len() != n
    {
        return Err(Error::Dimension(format!("parameters do not match N={n}")));
    }
    let expected = (n, panel.n_times().saturating_sub(1));
    if jumps.shape() != expected {
        return Err(Error::Dimension(format!(
            "jumps must be {}x{}, got {}x{}",
            expected.0,
            expected.1,
            jumps.nrows(),
            jumps.ncols()
        )));
    }
    Ok(())
}

pub fn forward_filter(panel: &ObservationPanel, params: &StateParams, jumps: &DMatrix<f64>) -> Result<ForwardPass> {
    check_shapes(panel, params, jumps)?;
    let n = panel.n_assets();
    let t_len = panel.n_times();
    let mut out = ForwardPass {
        predicted_mean: Vec::with_capacity(t_len),
        predicted_cov: Vec::with_capacity(t_len),
        filtered_mean: Vec::with_capacity(t_len),
        filtered_cov: Vec::with_capacity(t_len),
        gains: Vec::with_capacity(t_len),
        observed: Vec::with_capacity(t_len),
        log_likelihood: 0.0,
    };

    for t in 0..t_len {
        let (x_pred, p_pred) = if t == 0 {
            (params.init_mean.clone(), params.init_cov.clone())
        } else {
            let mut p = &out.filtered_cov[t - 1] + &params.gamma;
            symmetrize(&mut p);
            (&out.filtered_mean[t - 1] + &params.drift + jumps.column(t - 1), p)
        };

        let rows = panel.at(t);
        let idx: Vec<usize> = rows.iter().map(|&(i, _)| i).collect();
        let m = idx.len();
        let (x_filt, p_filt, gain) = if m == 0 {
            (x_pred.clone(), p_pred.clone(), DMatrix::zeros(n, 0))
        } else {
            // P Ĩᵀ, Ĩ P Ĩᵀ + Σ_o(t), innovation
            let p_cols = DMatrix::from_fn(n, m, |r, c| p_pred[(r, idx[c])]);
            let mut s = DMatrix::from_fn(m, m, |r, c| p_cols[(idx[r], c)]);
            for (k, &i) in idx.iter().enumerate() {
                s[(k, k)] += params.obs_var[i];
            }
            symmetrize(&mut s);
            let innov = DVector::from_fn(m, |k, _| rows[k].1 - x_pred[idx[k]]);
            let chol = cholesky(&s, &format!("innovation covariance at t={}", t + 1))?;
            let s_inv_v = chol.solve(&innov);
            out.log_likelihood -= 0.5 * (m as f64 * LN_2PI + log_det(&chol) + innov.dot(&s_inv_v));
            // G = P Ĩᵀ S⁻¹, computed as (S⁻¹ Ĩ P)ᵀ
            let gain = chol.solve(&p_cols.transpose()).transpose();
            let x = &x_pred + &p_cols * &s_inv_v;
            let mut p = &p_pred - &gain * p_cols.transpose();
            symmetrize(&mut p);
            (x, p, gain)
        };
        if x_filt.iter().any(|v| !v.is_finite()) || p_filt.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "forward filter".into(), step: t + 1 });
        }
        out.predicted_mean.push(x_pred);
        out.predicted_cov.push(p_pred);
        out.filtered_mean.push(x_filt);
        out.filtered_cov.push(p_filt);
        out.gains.push(gain);
        out.observed.push(idx);
    }
    Ok(out)
}

/// `(I − G(t) Ĩ(t)) M`.
fn one_minus_gain_times(gain: &DMatrix<f64>, idx: &[usize], m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    if !idx.is_empty() {
        let rows = DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)]);
        out -= gain * rows;
    }
    out
}

pub fn backward_smooth(forward: ForwardPass, _params: &StateParams) -> Result<SmootherMoments> {
    let t_len = forward.filtered_mean.len();
    let n = forward.filtered_mean.first().map_or(0, |x| x.len());
    let mut smoothed_mean = forward.filtered_mean.clone();
    let mut smoothed_cov = forward.filtered_cov.clone();
    let mut backward_gains = vec![DMatrix::zeros(n, n); t_len.saturating_sub(1)];

    for t in (1..t_len).rev() {
        // H(t−1) = P(t−1|t−1) P(t|t−1)⁻¹
        let chol = cholesky(&forward.predicted_cov[t], &format!("predicted covariance at t={}", t + 1))?;
        let h = chol.solve(&forward.filtered_cov[t - 1]).transpose();
        let dx = &smoothed_mean[t] - &forward.predicted_mean[t];
        smoothed_mean[t - 1] = &forward.filtered_mean[t - 1] + &h * dx;
        let dp = &smoothed_cov[t] - &forward.predicted_cov[t];
        let mut p = &forward.filtered_cov[t - 1] + &h * dp * h.transpose();
        symmetrize(&mut p);
        smoothed_cov[t - 1] = p;
        backward_gains[t - 1] = h;
    }

    // P(t,t−1|T), starting from the last time and recursing backwards
    let mut lag_one_cov = vec![DMatrix::zeros(n, n); t_len.saturating_sub(1)];
    if t_len >= 2 {
        let last = t_len - 1;
        lag_one_cov[last - 1] =
            one_minus_gain_times(&forward.gains[last], &forward.observed[last], &forward.filtered_cov[last - 1]);
        for t in (2..t_len).rev() {
            // entry t−2 is Cov(X(t−1), X(t−2))
            let h1 = &backward_gains[t - 1];
            let h2t = backward_gains[t - 2].transpose();
            let p = &forward.filtered_cov[t - 1];
            lag_one_cov[t - 2] = p * &h2t + h1 * (&lag_one_cov[t - 1] - p) * &h2t;
        }
    }
    if smoothed_mean.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite { context: "backward smoother".into(), step: 0 });
    }

    Ok(SmootherMoments { forward, smoothed_mean, smoothed_cov, lag_one_cov, backward_gains, pair_previous: None })
}

pub fn smooth(panel: &ObservationPanel, params: &StateParams, jumps: &DMatrix<f64>) -> Result<SmootherMoments> {
    backward_smooth(forward_filter(panel, params, jumps)?, params)
}

/// Moments that stand in for smoothed ones during the initial iterations.
///
/// Each transition pair `(X(t−1), X(t))` is conditioned on `y(1:t)`: `X(t)`
/// keeps its filtered moments and `X(t−1)` gets one backward step. Pairing
/// filtered `X(t)` with `P(t−1|t−1)` would count the variance accumulated
/// since an asset's last trade twice.
pub fn filter_only(panel: &ObservationPanel, params: &StateParams, jumps: &DMatrix<f64>) -> Result<SmootherMoments> {
    let forward = forward_filter(panel, params, jumps)?;
    let t_len = forward.filtered_mean.len();
    let mut prev_mean = Vec::with_capacity(t_len.saturating_sub(1));
    let mut prev_cov = Vec::with_capacity(t_len.saturating_sub(1));
    let mut lag_one_cov = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 1..t_len {
        let chol = cholesky(&forward.predicted_cov[t], &format!("predicted covariance at t={}", t + 1))?;
        let h = chol.solve(&forward.filtered_cov[t - 1]).transpose();
        prev_mean.push(&forward.filtered_mean[t - 1] + &h * (&forward.filtered_mean[t] - &forward.predicted_mean[t]));
        let mut p =
            &forward.filtered_cov[t - 1] + &h * (&forward.filtered_cov[t] - &forward.predicted_cov[t]) * h.transpose();
        symmetrize(&mut p);
        prev_cov.push(p);
        lag_one_cov.push(&forward.filtered_cov[t] * h.transpose());
    }
    Ok(SmootherMoments {
        smoothed_mean: forward.filtered_mean.clone(),
        smoothed_cov: forward.filtered_cov.clone(),
        forward,
        lag_one_cov,
        backward_gains: Vec::new(),
        pair_previous: Some((prev_mean, prev_cov)),
    })
}

/// `log p(y(1:T))` for the given parameters and jumps.
pub fn log_likelihood(panel: &ObservationPanel, params: &StateParams, jumps: &DMatrix<f64>) -> Result<f64> {
    Ok(forward_filter(panel, params, jumps)?.log_likelihood)
}
