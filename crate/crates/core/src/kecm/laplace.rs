//! Laplace jump prior: an `ℓ1`-penalized jump step solved by cyclic
//! coordinate descent, and the conjugate update of the per-entry rates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{
    check_inputs, initial_params, run_driver, EstimationReport, JumpBlock, JumpEstimate, JumpPrior, JumpStepContext,
    KecmRunConfig, Method,
};
use crate::error::Result;
use crate::linalg::{cholesky, ConditionalRegression};
use crate::model::{Hyperparameters, LaplaceJumpState, ObservationPanel, StateParams};

/// Soft threshold of `a` at `λ b²`.
pub fn laplace_shrink(a: f64, b2: f64, lambda: f64) -> f64 {
    let t = lambda * b2;
    if a > t {
        a - t
    } else if a < -t {
        a + t
    } else {
        0.0
    }
}

/// `½ (j − Δ)ᵀ Γ⁻¹ (j − Δ) + Σ λᵢ |jᵢ|`; infinite rates count only when
/// the coordinate is nonzero.
pub fn l1_objective(
    gamma: &DMatrix<f64>,
    delta: &DVector<f64>,
    lambda: &DVector<f64>,
    j: &DVector<f64>,
) -> Result<f64> {
    let r = j - delta;
    let quad = 0.5 * r.dot(&cholesky(gamma, "gamma")?.solve(&r));
    let pen: f64 = j.iter().zip(lambda.iter()).filter(|(v, _)| **v != 0.0).map(|(v, l)| l * v.abs()).sum();
    Ok(quad + pen)
}

/// Cyclic coordinate descent for `min ½ jᵀΓ⁻¹j − jᵀΓ⁻¹Δ + Σ λᵢ|jᵢ|`.
pub fn solve_l1_jump(
    gamma: &DMatrix<f64>,
    delta: &DVector<f64>,
    lambda: &DVector<f64>,
    warm_start: &DVector<f64>,
    cycles: usize,
) -> Result<DVector<f64>> {
    let reg = ConditionalRegression::new(gamma)?;
    Ok(solve_l1_with(&reg, delta, lambda, warm_start, cycles))
}

pub(crate) fn solve_l1_with(
    reg: &ConditionalRegression,
    delta: &DVector<f64>,
    lambda: &DVector<f64>,
    warm_start: &DVector<f64>,
    cycles: usize,
) -> DVector<f64> {
    let mut j = warm_start.clone();
    for _ in 0..cycles {
        let mut max_change = 0.0f64;
        for i in 0..reg.dim() {
            let new = if lambda[i].is_infinite() {
                0.0
            } else {
                laplace_shrink(reg.cond_mean(i, delta, &j), reg.cond_var(i), lambda[i])
            };
            max_change = max_change.max((new - j[i]).abs());
            j[i] = new;
        }
        if max_change < 1e-12 {
            break;
        }
    }
    j
}

/// `λᵢ(t) = (α_λ + 2) / (|Jᵢ(t)| + β_λ)`, infinite where `mask` is false.
pub fn update_lambda(jumps: &DMatrix<f64>, mask: &DMatrix<bool>, hyper: &Hyperparameters) -> DMatrix<f64> {
    DMatrix::from_fn(jumps.nrows(), jumps.ncols(), |i, c| {
        if mask[(i, c)] {
            (hyper.lambda_shape + 2.0) / (jumps[(i, c)].abs() + hyper.lambda_rate)
        } else {
            f64::INFINITY
        }
    })
}

/// `Σ (α_λ + 2) log λ − λ (|J| + β_λ)` over entries with a finite rate.
///
/// The Laplace density contributes `log λ − λ|J|` and the rate prior is an
/// inverse gamma on `λ⁻¹`, written in the `λ⁻¹` scale.
pub fn log_prior(state: &LaplaceJumpState, hyper: &Hyperparameters) -> f64 {
    state
        .rates
        .iter()
        .zip(state.jumps.iter())
        .filter(|(l, _)| l.is_finite())
        .map(|(l, j)| (hyper.lambda_shape + 2.0) * l.ln() - l * (j.abs() + hyper.lambda_rate))
        .sum()
}

struct LaplaceBlock(LaplaceJumpState);

impl JumpBlock for LaplaceBlock {
    fn jumps(&self) -> &DMatrix<f64> {
        &self.0.jumps
    }

    fn m_step(&mut self, ctx: &JumpStepContext<'_>) -> Result<()> {
        let state = &self.0;
        let cols: Vec<DVector<f64>> = (0..state.jumps.ncols())
            .into_par_iter()
            .map(|c| {
                let lambda = state.rates.column(c).into_owned();
                let warm = state.jumps.column(c).into_owned();
                solve_l1_with(ctx.reg, &ctx.increments[c], &lambda, &warm, ctx.cycles)
            })
            .collect();
        for (c, col) in cols.into_iter().enumerate() {
            self.0.jumps.set_column(c, &col);
        }
        self.0.rates = update_lambda(&self.0.jumps, ctx.mask, ctx.hyper);
        Ok(())
    }

    fn prior(&self) -> JumpPrior<'_> {
        JumpPrior::Laplace(&self.0)
    }

    fn into_estimate(self) -> JumpEstimate {
        JumpEstimate::Laplace(self.0)
    }
}

pub fn run_kecm_laplace(
    panel: &ObservationPanel,
    hyper: &Hyperparameters,
    config: &KecmRunConfig,
) -> Result<EstimationReport> {
    check_inputs(panel, hyper, config)?;
    let params = initial_params(panel, hyper)?;
    run_kecm_laplace_from(panel, hyper, config, params)
}

pub fn run_kecm_laplace_from(
    panel: &ObservationPanel,
    hyper: &Hyperparameters,
    config: &KecmRunConfig,
    params: StateParams,
) -> Result<EstimationReport> {
    check_inputs(panel, hyper, config)?;
    let state = LaplaceJumpState::initial(&panel.jump_mask(), hyper);
    run_driver(Method::KecmLaplace, panel, hyper, config, params, LaplaceBlock(state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_hyperparameters;
    use proptest::prelude::*;

    #[test]
    fn shrink_cases() {
        assert!((laplace_shrink(0.5, 0.1, 1.0) - 0.4).abs() < 1e-15);
        assert!((laplace_shrink(-0.5, 0.1, 1.0) + 0.4).abs() < 1e-15);
        assert_eq!(laplace_shrink(0.05, 0.1, 1.0), 0.0);
        assert_eq!(laplace_shrink(0.0, 3.0, 2.0), 0.0);
    }

    #[test]
    fn diagonal_problem_is_separable() {
        let g = DMatrix::identity(2, 2);
        let j = solve_l1_jump(
            &g,
            &DVector::from_row_slice(&[2.0, 0.5]),
            &DVector::from_element(2, 1.0),
            &DVector::zeros(2),
            10,
        )
        .unwrap();
        assert!((j[0] - 1.0).abs() < 1e-14 && j[1] == 0.0);
    }

    #[test]
    fn zero_penalty_recovers_delta() {
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let d = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let j = solve_l1_jump(&g, &d, &DVector::zeros(3), &DVector::zeros(3), 500).unwrap();
        assert!((j - d).abs().max() < 1e-10);
    }

    #[test]
    fn correlated_pair_matches_grid_search() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let d = DVector::from_row_slice(&[1.0, -1.0]);
        let l = DVector::from_element(2, 0.5);
        let j = solve_l1_jump(&g, &d, &l, &DVector::zeros(2), 200).unwrap();
        let f = l1_objective(&g, &d, &l, &j).unwrap();
        let mut best = f64::INFINITY;
        let prec = g.clone().try_inverse().unwrap();
        for a in -250..=250 {
            for b in -250..=250 {
                let x = DVector::from_row_slice(&[a as f64 * 1e-2, b as f64 * 1e-2]);
                let r = &x - &d;
                let v = 0.5 * (r.transpose() * &prec * &r)[(0, 0)] + 0.5 * (x[0].abs() + x[1].abs());
                best = best.min(v);
            }
        }
        assert!(f <= best + 2e-4, "cd {f} grid {best}");
    }

    #[test]
    fn lambda_update_values() {
        let h = default_hyperparameters(1);
        let mask = DMatrix::from_row_slice(1, 3, &[true, true, false]);
        let j = DMatrix::from_row_slice(1, 3, &[0.0, 0.0995, 0.0]);
        let l = update_lambda(&j, &mask, &h);
        assert!((l[(0, 0)] - 15200.0).abs() < 1e-9);
        assert!((l[(0, 1)] - 76.0).abs() < 1e-9);
        assert!(l[(0, 2)].is_infinite());
    }

    #[test]
    fn infinite_rate_pins_coordinate() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let l = DVector::from_row_slice(&[0.1, f64::INFINITY]);
        let j = solve_l1_jump(&g, &DVector::from_row_slice(&[3.0, 3.0]), &l, &DVector::zeros(2), 5).unwrap();
        assert_eq!(j[1], 0.0);
        assert!(j[0] > 0.0);
    }

    fn spd(n: usize, seed: &[f64]) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    proptest! {
        #[test]
        fn sweeps_never_increase_objective_and_satisfy_kkt(
            n in 1usize..=6,
            entries in proptest::collection::vec(-1.0f64..1.0, 36),
            delta in proptest::collection::vec(-3.0f64..3.0, 6),
            lam in proptest::collection::vec(0.0f64..2.0, 6),
        ) {
            let g = spd(n, &entries);
            let d = DVector::from_row_slice(&delta[..n]);
            let l = DVector::from_row_slice(&lam[..n]);
            let reg = ConditionalRegression::new(&g).unwrap();
            let mut j = DVector::zeros(n);
            let mut f = l1_objective(&g, &d, &l, &j).unwrap();
            for _ in 0..2000 {
                j = solve_l1_with(&reg, &d, &l, &j, 1);
                let f_new = l1_objective(&g, &d, &l, &j).unwrap();
                prop_assert!(f_new <= f + 1e-12 * f.abs().max(1.0));
                f = f_new;
            }
            // gradient of the smooth part is Γ⁻¹ (j − Δ)
            let grad = cholesky(&g, "g").unwrap().solve(&(&j - &d));
            for i in 0..n {
                if j[i] != 0.0 {
                    prop_assert!((grad[i] + l[i] * j[i].signum()).abs() <= 1e-6);
                } else {
                    prop_assert!(grad[i].abs() <= l[i] + 1e-6);
                }
            }
        }
    }
}
