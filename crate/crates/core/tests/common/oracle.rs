//! Brute-force joint-Gaussian conditioning of the whole state path, used as
//! an independent check on the filter and smoother.

use jumpcov::kalman::smooth;
use jumpcov::random::seeded_rng;
use jumpcov::{ObservationPanel, StateParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub struct Instance {
    pub panel: ObservationPanel,
    pub params: StateParams,
    pub jumps: DMatrix<f64>,
}

fn random_spd<R: Rng>(rng: &mut R, n: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * ridge
}

/// Random instance with `N ≤ 3`, `2 ≤ T ≤ 5`, random masks (possibly empty
/// at some times) and random jumps.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = seeded_rng(seed, 17);
    let n = rng.random_range(1..=3);
    let t_len = rng.random_range(2..=5);
    let mut obs = vec![Vec::new(); t_len];
    for row in obs.iter_mut() {
        for i in 0..n {
            if rng.random_bool(0.6) {
                row.push((i, rng.random_range(-2.0..2.0)));
            }
        }
    }
    let panel = ObservationPanel::new(n, obs).unwrap();
    let params = StateParams {
        drift: DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5)),
        gamma: random_spd(&mut rng, n, 0.1),
        obs_var: DVector::from_fn(n, |_, _| rng.random_range(0.05..1.0)),
        init_mean: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        init_cov: random_spd(&mut rng, n, 0.2),
    };
    let jumps =
        DMatrix::from_fn(n, t_len - 1, |_, _| if rng.random_bool(0.3) { rng.random_range(-1.0..1.0) } else { 0.0 });
    Instance { panel, params, jumps }
}

pub struct JointPosterior {
    /// Stacked `(X(1), …, X(T))` posterior mean.
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_likelihood: f64,
}

/// Conditions the prior of the stacked path on every observation at once.
pub fn joint_posterior(inst: &Instance) -> JointPosterior {
    let p = &inst.params;
    let n = p.drift.len();
    let t_len = inst.panel.n_times();
    let dim = n * t_len;
    let mut mean = DVector::zeros(dim);
    let mut level = p.init_mean.clone();
    for t in 0..t_len {
        if t > 0 {
            level += &p.drift + inst.jumps.column(t - 1);
        }
        mean.rows_mut(t * n, n).copy_from(&level);
    }
    // Cov(X(s), X(t)) = K + min(s, t) Γ with 0-based times
    let mut cov = DMatrix::zeros(dim, dim);
    for s in 0..t_len {
        for t in 0..t_len {
            let block = &p.init_cov + &p.gamma * s.min(t) as f64;
            cov.view_mut((s * n, t * n), (n, n)).copy_from(&block);
        }
    }
    let rows: Vec<(usize, f64, f64)> = (0..t_len)
        .flat_map(|t| inst.panel.at(t).iter().map(move |&(i, y)| (t * n + i, y, 0.0)))
        .map(|(k, y, _)| (k, y, p.obs_var[k % n]))
        .collect();
    if rows.is_empty() {
        return JointPosterior { mean, cov, log_likelihood: 0.0 };
    }
    let m = rows.len();
    let h = DMatrix::from_fn(m, dim, |r, c| if rows[r].0 == c { 1.0 } else { 0.0 });
    let y = DVector::from_iterator(m, rows.iter().map(|r| r.1));
    let s = &h * &cov * h.transpose() + DMatrix::from_diagonal(&DVector::from_iterator(m, rows.iter().map(|r| r.2)));
    let s_inv = s.clone().try_inverse().unwrap();
    let resid = &y - &h * &mean;
    let k = &cov * h.transpose() * &s_inv;
    let post_mean = &mean + &k * &resid;
    let post_cov = &cov - &k * &h * &cov;
    let log_likelihood =
        -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + s.determinant().ln() + resid.dot(&(&s_inv * &resid)));
    JointPosterior { mean: post_mean, cov: post_cov, log_likelihood }
}

/// Largest absolute difference between the smoother's moments (means,
/// covariances, lag-one covariances, log-likelihood) and the joint oracle.
pub fn smoother_discrepancy(seed: u64) -> f64 {
    let inst = random_instance(seed);
    let n = inst.params.drift.len();
    let t_len = inst.panel.n_times();
    let oracle = joint_posterior(&inst);
    let s = smooth(&inst.panel, &inst.params, &inst.jumps).unwrap();
    let mut worst: f64 = (s.log_likelihood() - oracle.log_likelihood).abs();
    for t in 0..t_len {
        let m = oracle.mean.rows(t * n, n);
        worst = worst.max((&s.smoothed_mean[t] - m).abs().max());
        let c = oracle.cov.view((t * n, t * n), (n, n));
        worst = worst.max((&s.smoothed_cov[t] - c).abs().max());
        if t > 0 {
            let lag = oracle.cov.view((t * n, (t - 1) * n), (n, n));
            worst = worst.max((&s.lag_one_cov[t - 1] - lag).abs().max());
        }
    }
    worst
}
