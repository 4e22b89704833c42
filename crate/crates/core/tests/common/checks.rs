//! Independent reference computations shared by the integration tests and
//! the acceptance suite.

use jumpcov::gibbs::{sweep, GibbsConfig, GibbsFreeze, GibbsState};
use jumpcov::kecm::spikeslab::spike_objective;
use jumpcov::random::seeded_rng;
use jumpcov::simulate::{simulate, SimConfig};
use jumpcov::{default_hyperparameters, Hyperparameters, ObservationPanel, StateParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{Continuous, Normal};

/// Random 2×2 covariance with correlation in `(−0.9, 0.9)`.
pub fn random_spd2(rng: &mut impl Rng) -> DMatrix<f64> {
    let rho: f64 = rng.random_range(-0.9..0.9);
    let (s1, s2): (f64, f64) = (rng.random_range(0.3..2.0), rng.random_range(0.3..2.0));
    DMatrix::from_row_slice(2, 2, &[s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2])
}

/// Grid minimum of `f` on `[-r, r]²`: a pass at `step`, then a pass at
/// `step / 100` around the best point. Valid because `f` is convex.
pub fn grid_min(f: impl Fn(f64, f64) -> f64, r: f64, step: f64) -> f64 {
    let n = (r / step).round() as i64;
    let (mut best, mut at) = (f64::INFINITY, (0.0, 0.0));
    for a in -n..=n {
        for b in -n..=n {
            let (x, y) = (a as f64 * step, b as f64 * step);
            let v = f(x, y);
            if v < best {
                best = v;
                at = (x, y);
            }
        }
    }
    let fine = step / 100.0;
    for a in -100..=100 {
        for b in -100..=100 {
            best = best.min(f(at.0 + a as f64 * fine, at.1 + b as f64 * fine));
        }
    }
    best
}

/// `½ (j − Δ)ᵀ Γ⁻¹ (j − Δ) + Σ λᵢ |jᵢ|` from an explicit inverse.
pub fn l1_objective_2d(g: &DMatrix<f64>, d: &DVector<f64>, l: &DVector<f64>) -> impl Fn(f64, f64) -> f64 {
    let prec = g.clone().try_inverse().unwrap();
    let (d, l) = (d.clone(), l.clone());
    move |x, y| {
        let r = DVector::from_row_slice(&[x - d[0], y - d[1]]);
        0.5 * r.dot(&(&prec * &r)) + l[0] * x.abs() + l[1] * y.abs()
    }
}

/// Best spike-and-slab objective over the four indicator patterns, each
/// with its optimal slab values `(Γ⁻¹_AA + S⁻¹)⁻¹ (Γ⁻¹Δ)_A`.
pub fn enumerate_patterns(g: &DMatrix<f64>, d: &DVector<f64>, zeta: f64, s: &DVector<f64>) -> f64 {
    let prec = g.clone().try_inverse().unwrap();
    let pd = &prec * d;
    let mut best = f64::INFINITY;
    for pat in 0..4u8 {
        let z = [pat & 1 == 1, pat & 2 == 2];
        let act: Vec<usize> = (0..2).filter(|&i| z[i]).collect();
        let mut j = DVector::zeros(2);
        if !act.is_empty() {
            let m = DMatrix::from_fn(act.len(), act.len(), |a, b| {
                prec[(act[a], act[b])] + if a == b { 1.0 / s[act[a]] } else { 0.0 }
            });
            let rhs = DVector::from_fn(act.len(), |a, _| pd[act[a]]);
            let sol = m.try_inverse().unwrap() * rhs;
            for (a, &i) in act.iter().enumerate() {
                j[i] = sol[a];
            }
        }
        best = best.min(spike_objective(g, d, zeta, s, &z, &j).unwrap());
    }
    best
}

/// Every Gibbs block frozen except those `f` releases.
pub fn frozen_except(f: impl FnOnce(&mut GibbsFreeze)) -> GibbsFreeze {
    let mut all = GibbsFreeze {
        missing: true,
        states: true,
        jumps: true,
        drift: true,
        gamma: true,
        obs_var: true,
        spike_prob: true,
        slab_var: true,
    };
    f(&mut all);
    all
}

/// Posterior of the tiny model on a grid: `X(1) ~ N(0, 1)`, `y = (0, 3)`,
/// `σ_o² = 0.5`, `Γ = 1`, `D = 0`, `ζ = 0.7`, `σⱼ² = 4`. Returns bin masses
/// of `X(2)` and `Pr(z = 1)`.
pub fn tiny_grid(edges: &[f64]) -> (Vec<f64>, f64) {
    let n01 = |x: f64, v: f64| Normal::new(0.0, v.sqrt()).unwrap().pdf(x);
    let (lo, hi, m) = (-6.0, 10.0, 400);
    let h = (hi - lo) / m as f64;
    let pts: Vec<f64> = (0..m).map(|k| lo + (k as f64 + 0.5) * h).collect();
    let mut mass = vec![0.0; edges.len() - 1];
    let (mut w0, mut w1) = (0.0, 0.0);
    for &x2 in &pts {
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for &x1 in &pts {
            let base = n01(x1, 1.0) * n01(x1, 0.5) * n01(x2 - 3.0, 0.5);
            d0 += base * 0.7 * n01(x2 - x1, 1.0);
            let mut inner = 0.0;
            for &j in &pts {
                inner += n01(j, 4.0) * n01(x2 - x1 - j, 1.0);
            }
            d1 += base * 0.3 * inner * h;
        }
        w0 += d0;
        w1 += d1;
        if let Some(b) = edges.windows(2).position(|e| x2 >= e[0] && x2 < e[1]) {
            mass[b] += d0 + d1;
        }
    }
    let total = w0 + w1;
    (mass.iter().map(|v| v / total).collect(), w1 / total)
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Gibbs state sitting at the simulated truth of a jump-free panel.
pub fn truth_state(n: usize, t: usize, seed: u64) -> (ObservationPanel, GibbsState, Hyperparameters) {
    let sim = simulate(&SimConfig { n_assets: n, n_times: t, zeta: 1.0, ..SimConfig::default() }, seed).unwrap();
    let h = default_hyperparameters(n);
    let x = sim.truth.x.clone();
    let params = StateParams {
        drift: sim.truth.drift.clone(),
        gamma: sim.truth.gamma.clone(),
        obs_var: sim.truth.obs_var.clone(),
        init_mean: x.column(0).into_owned(),
        init_cov: DMatrix::identity(n, n) * 1e-6,
    };
    let state = GibbsState {
        y_tot: x.clone(),
        indicator: sim.truth.indicator.clone(),
        jumps: sim.truth.jumps.clone(),
        x,
        params,
        spike_prob: 0.99,
        slab_var: DMatrix::from_element(n, t - 1, 1e-4),
    };
    (sim.panel, state, h)
}

/// Runs the state and jump blocks of the sampler on the tiny model of
/// [`tiny_grid`] for `n` sweeps after 1000 burn-in sweeps. Returns bin
/// frequencies of `X(2)` and the jump rate.
pub fn tiny_model_chain(edges: &[f64], n: usize, seed: u64) -> (Vec<f64>, f64) {
    let panel = ObservationPanel::new(1, vec![vec![(0, 0.0)], vec![(0, 3.0)]]).unwrap();
    let h = default_hyperparameters(1);
    let mut state = GibbsState {
        x: DMatrix::from_row_slice(1, 2, &[0.0, 3.0]),
        y_tot: DMatrix::from_row_slice(1, 2, &[0.0, 3.0]),
        indicator: DMatrix::from_element(1, 1, false),
        jumps: DMatrix::zeros(1, 1),
        params: StateParams {
            drift: DVector::zeros(1),
            gamma: DMatrix::identity(1, 1),
            obs_var: DVector::from_element(1, 0.5),
            init_mean: DVector::zeros(1),
            init_cov: DMatrix::identity(1, 1),
        },
        spike_prob: 0.7,
        slab_var: DMatrix::from_element(1, 1, 4.0),
    };
    let cfg = GibbsConfig {
        freeze: frozen_except(|f| {
            f.states = false;
            f.jumps = false;
        }),
        ..GibbsConfig::default()
    };
    let mask = panel.jump_mask();
    let mut rng = seeded_rng(seed, 0);
    let mut counts = vec![0usize; edges.len() - 1];
    let mut jumps = 0usize;
    for k in 0..n + 1000 {
        sweep(&mut state, &panel, &mask, &h, &cfg, &mut rng).unwrap();
        if k < 1000 {
            continue;
        }
        let x2 = state.x[(0, 1)];
        if let Some(b) = edges.windows(2).position(|e| x2 >= e[0] && x2 < e[1]) {
            counts[b] += 1;
        }
        jumps += state.indicator[(0, 0)] as usize;
    }
    (counts.iter().map(|c| *c as f64 / n as f64).collect(), jumps as f64 / n as f64)
}
