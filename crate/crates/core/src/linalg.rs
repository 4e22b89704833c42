//! Small dense linear-algebra helpers shared by the filters and estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::not_pd(format!("{what} has non-finite entries")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::not_pd(what.to_string()))
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// `log |m|` from a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrized(m.clone())).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Max absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn rel_frobenius_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let denom = old.norm();
    if denom == 0.0 {
        return if new.norm() == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (new - old).norm() / denom
}

/// Rows/columns `idx` of a square matrix.
pub fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Per-coordinate Gaussian conditioning for a covariance `Γ`.
///
/// Row `i` of `coefs` holds `Γ₋ᵢ₋ᵢ⁻¹ Γ₋ᵢᵢ` spread back to full width with a
/// zero at `i`, and `cond_var[i] = Γᵢᵢ − Γᵢ₋ᵢ Γ₋ᵢ₋ᵢ⁻¹ Γ₋ᵢᵢ`. Each row comes
/// from a solve against the `(N−1)`-dimensional block; `Γ⁻¹` is never formed.
#[derive(Debug, Clone)]
pub struct ConditionalRegression {
    coefs: DMatrix<f64>,
    cond_var: Vec<f64>,
}

impl ConditionalRegression {
    pub fn new(gamma: &DMatrix<f64>) -> Result<Self> {
        let n = gamma.nrows();
        if gamma.ncols() != n || n == 0 {
            return Err(Error::Dimension("covariance must be square and non-empty".into()));
        }
        let mut coefs = DMatrix::zeros(n, n);
        let mut cond_var = Vec::with_capacity(n);
        for i in 0..n {
            let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            if others.is_empty() {
                cond_var.push(gamma[(i, i)]);
                continue;
            }
            let block = submatrix(gamma, &others);
            let cross = DVector::from_iterator(others.len(), others.iter().map(|&k| gamma[(k, i)]));
            let chol = cholesky(&block, "leave-one-out covariance block")?;
            let beta = chol.solve(&cross);
            let b2 = gamma[(i, i)] - cross.dot(&beta);
            if !(b2 > 0.0) {
                return Err(Error::not_pd(format!("conditional variance of coordinate {} is {b2}", i + 1)));
            }
            for (pos, &k) in others.iter().enumerate() {
                coefs[(i, k)] = beta[pos];
            }
            cond_var.push(b2);
        }
        Ok(Self { coefs, cond_var })
    }

    pub fn dim(&self) -> usize {
        self.cond_var.len()
    }

    /// `b²(i)`.
    pub fn cond_var(&self, i: usize) -> f64 {
        self.cond_var[i]
    }

    /// `a(i) = Δᵢ + Γᵢ₋ᵢ Γ₋ᵢ₋ᵢ⁻¹ (j₋ᵢ − Δ₋ᵢ)`.
    pub fn cond_mean(&self, i: usize, delta: &DVector<f64>, j: &DVector<f64>) -> f64 {
        let mut acc = delta[i];
        for k in 0..self.dim() {
            acc += self.coefs[(i, k)] * (j[k] - delta[k]);
        }
        acc
    }
}
