//! Numerical checks of the oracle jump estimator: its fixed-point form,
//! its large-slab limit and the `erf` lower bounds on recovery accuracy.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::kecm::spikeslab::slab_shrink;
use crate::linalg::{cholesky, inf_norm, submatrix, ConditionalRegression};
use crate::random::{mvn_from_factor, seeded_rng};

/// Jump support on the first `M` assets with slab variances `σⱼ²`.
#[derive(Debug, Clone)]
pub struct OracleProblem {
    pub gamma: DMatrix<f64>,
    pub slab_var: DVector<f64>,
}

impl OracleProblem {
    pub fn new(gamma: DMatrix<f64>, slab_var: DVector<f64>) -> Result<Self> {
        let n = gamma.nrows();
        let m = slab_var.len();
        if gamma.ncols() != n || m == 0 || m > n {
            return Err(Error::Dimension(format!("support size {m} must be in 1..={n}")));
        }
        if slab_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("slab variances must be positive"));
        }
        cholesky(&gamma, "gamma")?;
        Ok(Self { gamma, slab_var })
    }

    pub fn n(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn support(&self) -> usize {
        self.slab_var.len()
    }

    /// `Q = diag(σⱼ², 0)`.
    pub fn q(&self) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.n(), self.n());
        for (i, v) in self.slab_var.iter().enumerate() {
            q[(i, i)] = *v;
        }
        q
    }

    /// `Q′(Q + Γ)⁻¹`, an `M × N` matrix.
    pub fn oracle_operator(&self) -> Result<DMatrix<f64>> {
        let m = self.support();
        let chol = cholesky(&(&self.gamma + self.q()), "Q + gamma")?;
        // (Q+Γ)⁻¹ is symmetric, so Q′(Q+Γ)⁻¹ = (Q+Γ)⁻¹ Q′ᵀ transposed
        let mut qt = DMatrix::zeros(self.n(), m);
        for i in 0..m {
            qt[(i, i)] = self.slab_var[i];
        }
        Ok(chol.solve(&qt).transpose())
    }

    /// `[I, −Γ₁₂Γ₂₂⁻¹]`, the limit of the oracle operator for large slabs.
    pub fn limit_operator(&self) -> Result<DMatrix<f64>> {
        let (n, m) = (self.n(), self.support());
        let mut out = DMatrix::zeros(m, n);
        for i in 0..m {
            out[(i, i)] = 1.0;
        }
        if m < n {
            let rest: Vec<usize> = (m..n).collect();
            let g22 = submatrix(&self.gamma, &rest);
            let g21 = self.gamma.view((m, 0), (n - m, m)).into_owned();
            // Γ₁₂Γ₂₂⁻¹ = (Γ₂₂⁻¹Γ₂₁)ᵀ
            let coef = cholesky(&g22, "gamma_22")?.solve(&g21).transpose();
            out.view_mut((0, m), (m, n - m)).copy_from(&(-coef));
        }
        Ok(out)
    }

    /// Largest diagonal entry of `Γ₁₁ − Γ₁₂Γ₂₂⁻¹Γ₂₁`.
    pub fn b_max(&self) -> Result<f64> {
        let lim = self.limit_operator()?;
        let s = &lim * &self.gamma * lim.transpose();
        Ok(s.diagonal().iter().cloned().fold(0.0, f64::max))
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma.diagonal().iter().cloned().fold(0.0, f64::max)
    }
}

/// `Ĵ = Q′(Q + Γ)⁻¹Δ` on the support, zero elsewhere.
pub fn oracle_jump_estimate(prob: &OracleProblem, delta: &DVector<f64>) -> Result<DVector<f64>> {
    let head = prob.oracle_operator()? * delta;
    let mut j = DVector::zeros(prob.n());
    j.rows_mut(0, prob.support()).copy_from(&head);
    Ok(j)
}

/// Largest `|Ĵᵢ − a(i)/(1 + b²(i)/σⱼ²ᵢ)|` over the support, with `a`, `b²`
/// evaluated at `j = Ĵ`.
pub fn fixed_point_residual(prob: &OracleProblem, delta: &DVector<f64>) -> Result<f64> {
    let j = oracle_jump_estimate(prob, delta)?;
    let reg = ConditionalRegression::new(&prob.gamma)?;
    Ok((0..prob.support())
        .map(|i| (j[i] - slab_shrink(reg.cond_mean(i, delta, &j), reg.cond_var(i), prob.slab_var[i])).abs())
        .fold(0.0, f64::max))
}

/// `‖Q′(Γ + Q)⁻¹ − [I, −Γ₁₂Γ₂₂⁻¹]‖_∞`.
pub fn slab_limit_residual(prob: &OracleProblem) -> Result<f64> {
    Ok(inf_norm(&(prob.oracle_operator()? - prob.limit_operator()?)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub coord: usize,
    pub delta: f64,
    pub bound: f64,
    pub empirical: f64,
    pub std_err: f64,
    pub pass: bool,
}

/// Monte Carlo check of `Pr(|Ĵᵢ − Jᵢ| < δ) ≥ erf(max(δ − η, 0)/√(2σ_q²))` on
/// the support, with `σ_q² = (N ε₁ √Γ_max + √b_max)²`, `ε₁` the measured
/// [`slab_limit_residual`] and `η = ε₁‖Ĵ‖₁` at the noise-free oracle estimate.
/// A row fails when the empirical rate is more than three binomial standard
/// errors below the bound.
pub fn erf_bound_check(
    prob: &OracleProblem,
    true_jumps: &DVector<f64>,
    deltas: &[f64],
    n_trials: usize,
    seed: u64,
) -> Result<Vec<BoundRow>> {
    let n = prob.n();
    if true_jumps.len() != n {
        return Err(Error::Dimension(format!("true jumps must have length {n}")));
    }
    if true_jumps.rows(prob.support(), n - prob.support()).iter().any(|v| *v != 0.0) {
        return Err(Error::invalid("true jumps must vanish off the support"));
    }
    let eps1 = slab_limit_residual(prob)?;
    let sigma_q2 = (n as f64 * eps1 * prob.gamma_max().sqrt() + prob.b_max()?.sqrt()).powi(2);
    let eta = eps1 * oracle_jump_estimate(prob, true_jumps)?.iter().map(|v| v.abs()).sum::<f64>();

    let op = prob.oracle_operator()?;
    let lower = cholesky(&prob.gamma, "gamma")?.l();
    let mut rng = seeded_rng(seed, 0);
    let m = prob.support();
    let mut hits = vec![vec![0usize; deltas.len()]; m];
    for _ in 0..n_trials {
        let delta = mvn_from_factor(&mut rng, true_jumps, &lower);
        let est = &op * delta;
        for i in 0..m {
            let err = (est[i] - true_jumps[i]).abs();
            for (k, d) in deltas.iter().enumerate() {
                if err < *d {
                    hits[i][k] += 1;
                }
            }
        }
    }
    let mut rows = Vec::new();
    for (i, hit) in hits.iter().enumerate() {
        for (k, &d) in deltas.iter().enumerate() {
            let bound = erf((d - eta).max(0.0) / (2.0 * sigma_q2).sqrt());
            let empirical = hit[k] as f64 / n_trials as f64;
            let std_err = (bound * (1.0 - bound) / n_trials as f64).sqrt().max(0.5 / n_trials as f64);
            rows.push(BoundRow {
                coord: i + 1,
                delta: d,
                bound,
                empirical,
                std_err,
                pass: empirical >= bound - 3.0 * std_err,
            });
        }
    }
    Ok(rows)
}

/// One line of the `verify-theory` output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryRow {
    pub instance: usize,
    pub quantity: String,
    pub bound: f64,
    pub empirical: f64,
    pub pass: bool,
}

fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.2
}

/// The standard battery: fixed-point identity and large-slab decay on random
/// instances, and `erf` bounds on diagonal instances.
pub fn verify_theory(n_instances: usize, n_trials: usize, seed: u64) -> Result<Vec<TheoryRow>> {
    let mut rows = Vec::new();
    let mut rng = seeded_rng(seed, 0);
    for inst in 0..n_instances {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=n);
        let gamma = random_spd(&mut rng, n);
        let slab = DVector::from_fn(m, |_, _| rng.random_range(0.1..5.0));
        let delta = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let prob = OracleProblem::new(gamma.clone(), slab.clone())?;
        let fp = fixed_point_residual(&prob, &delta)?;
        rows.push(TheoryRow {
            instance: inst + 1,
            quantity: "fixed_point_residual".into(),
            bound: 1e-10,
            empirical: fp,
            pass: fp <= 1e-10,
        });
        // the 1/q decay is asymptotic: the scalar ratio (Γ + 100q)/(Γ + q) is
        // only 50.5 at q = Γ, so decay is checked from q ≥ 10 Γ_max
        let q = DVector::from_fn(m, |_, _| prob.gamma_max() * 10f64.powf(rng.random_range(1.0..3.0)));
        let r1 = slab_limit_residual(&OracleProblem::new(gamma.clone(), q.clone())?)?;
        let r100 = slab_limit_residual(&OracleProblem::new(gamma, q * 100.0)?)?;
        let ratio = if r100 > 0.0 { r1 / r100 } else { f64::INFINITY };
        rows.push(TheoryRow {
            instance: inst + 1,
            quantity: "slab_decay_ratio".into(),
            bound: 50.0,
            empirical: ratio,
            pass: ratio >= 50.0,
        });
    }
    for inst in 0..n_instances.min(10) {
        let n = rng.random_range(1..=4);
        let gamma = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0)));
        let prob = OracleProblem::new(gamma, DVector::from_element(1, 1e4))?;
        let mut j = DVector::zeros(n);
        j[0] = rng.random_range(2.0..6.0);
        let deltas = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0];
        for row in erf_bound_check(&prob, &j, &deltas, n_trials, seed.wrapping_add(inst as u64 + 1))? {
            rows.push(TheoryRow {
                instance: n_instances + inst + 1,
                quantity: format!("erf_bound_delta_{}", row.delta),
                bound: row.bound,
                empirical: row.empirical,
                pass: row.pass,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_oracle_is_shrinkage() {
        let prob = OracleProblem::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 3.0)).unwrap();
        let j = oracle_jump_estimate(&prob, &DVector::from_element(1, 1.5)).unwrap();
        assert!((j[0] - 3.0 / 5.0 * 1.5).abs() < 1e-15);
    }

    #[test]
    fn diagonal_residual_closed_form() {
        let g = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 2.0, 0.5]));
        let s = DVector::from_row_slice(&[3.0, 1.0, 4.0]);
        let prob = OracleProblem::new(g, s).unwrap();
        let expected: f64 = [1.0 / 4.0, 2.0 / 3.0, 0.5 / 4.5].into_iter().fold(0.0, f64::max);
        assert!((slab_limit_residual(&prob).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn large_slab_reaches_limit() {
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 2.0, 0.4, 0.1, 0.4, 1.5]);
        let gmax = 2.0;
        let prob = OracleProblem::new(g, DVector::from_element(2, 1e8 * gmax)).unwrap();
        let lim = inf_norm(&prob.limit_operator().unwrap());
        assert!(slab_limit_residual(&prob).unwrap() < 1e-6 * lim);
        let delta = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let j = oracle_jump_estimate(&prob, &delta).unwrap();
        let target = prob.limit_operator().unwrap() * &delta;
        for i in 0..2 {
            assert!((j[i] - target[i]).abs() <= 1e-4 * target[i].abs());
        }
    }

    #[test]
    fn bound_is_zero_below_eta_and_monotone() {
        let prob = OracleProblem::new(DMatrix::identity(2, 2), DVector::from_element(1, 0.5)).unwrap();
        let j = DVector::from_row_slice(&[3.0, 0.0]);
        let deltas: Vec<f64> = (1..=20).map(|k| k as f64 * 0.2).collect();
        let rows = erf_bound_check(&prob, &j, &deltas, 2000, 1).unwrap();
        assert_eq!(rows[0].bound, 0.0);
        for w in rows.windows(2) {
            assert!(w[1].bound >= w[0].bound);
        }
    }
}
