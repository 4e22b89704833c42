//! Seeded generators and the few draws not provided by `rand_distr`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrized};

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draw from `IG(shape, scale)`, density ∝ `x^{−shape−1} e^{−scale/x}`.
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    let g =
        Gamma::new(shape, 1.0 / scale).map_err(|e| Error::invalid(format!("inverse gamma ({shape}, {scale}): {e}")))?;
    Ok(1.0 / g.sample(rng))
}

/// Draw from `N(mean, cov)` given the lower Cholesky factor of `cov`.
pub fn mvn_from_factor<R: Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, lower: &DMatrix<f64>) -> DVector<f64> {
    mean + lower * standard_normal_vec(rng, mean.len())
}

/// Draw from the inverse Wishart with scale `psi` and `dof` degrees of
/// freedom (mean `psi / (dof − N − 1)`): a Bartlett draw of
/// `W ~ Wishart(psi⁻¹, dof)`, inverted.
pub fn inverse_wishart<R: Rng + ?Sized>(rng: &mut R, psi: &DMatrix<f64>, dof: f64) -> Result<DMatrix<f64>> {
    let n = psi.nrows();
    if !(dof > n as f64 - 1.0) {
        return Err(Error::invalid(format!("inverse Wishart needs dof > N-1, got {dof}")));
    }
    // psi⁻¹ = (Lψ Lψᵀ)⁻¹ = Lψ⁻ᵀ Lψ⁻¹, so W = Lψ⁻ᵀ A Aᵀ Lψ⁻¹ and W⁻¹ = Lψ (A Aᵀ)⁻¹ Lψᵀ
    let lpsi = cholesky(psi, "inverse Wishart scale")?.l();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new(dof - i as f64).map_err(|e| Error::invalid(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    // (A Aᵀ)⁻¹ = A⁻ᵀ A⁻¹; with B = Lψ A⁻ᵀ the draw is B Bᵀ
    let a_inv = a.solve_lower_triangular(&DMatrix::identity(n, n)).ok_or_else(|| Error::not_pd("Bartlett factor"))?;
    let b = lpsi * a_inv.transpose();
    Ok(symmetrized(&b * b.transpose()))
}
