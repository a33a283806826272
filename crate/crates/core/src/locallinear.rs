//! Conjugate updates for the local polynomial coefficients `B` and the
//! precision `ω` of the kernel-weighted working likelihood.
//!
//! `B` is `(2q+1) x (d+1)` with matrix-normal prior `MN(M0, V0, U0)`; the
//! update works on the column-stacked `vec(B)`, whose prior covariance is
//! `U0 ⊗ V0` and whose design vector for unit `i` is `z̃_i ⊗ x̃_i`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::data::DesignRow;
use crate::error::{Error, Result};

const JITTER: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct LocalLinearPrior {
    pub m0: DMatrix<f64>,
    /// Row covariance, `(2q+1) x (2q+1)`.
    pub v0: DMatrix<f64>,
    /// Column covariance, `(d+1) x (d+1)`.
    pub u0: DMatrix<f64>,
    pub nu0: f64,
    pub eta0: f64,
}

impl LocalLinearPrior {
    /// `M0 = 0`, `V0 = 100 I`, `U0 = I`, `ν0 = η0 = 1`.
    pub fn default_for(q: usize, d: usize) -> Self {
        let p = 2 * q + 1;
        Self {
            m0: DMatrix::zeros(p, d + 1),
            v0: DMatrix::identity(p, p) * 100.0,
            u0: DMatrix::identity(d + 1, d + 1),
            nu0: 1.0,
            eta0: 1.0,
        }
    }

    pub fn rows(&self) -> usize {
        self.m0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m0.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, k) = self.m0.shape();
        if self.v0.shape() != (p, p) || self.u0.shape() != (k, k) {
            return Err(Error::Config("prior covariance shapes do not match M0".into()));
        }
        for (name, m) in [("V0", &self.v0), ("U0", &self.u0)] {
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::Config(format!("{name} is not symmetric")));
            }
            if Cholesky::new(m.clone()).is_none() {
                return Err(Error::Config(format!("{name} is not positive definite")));
            }
        }
        if !(self.nu0 > 0.0) || !(self.eta0 > 0.0) {
            return Err(Error::Config("Gamma prior needs positive shape and rate".into()));
        }
        Ok(())
    }

    /// Prior covariance of `vec(B)`: `U0 ⊗ V0`.
    pub fn vec_covariance(&self) -> DMatrix<f64> {
        self.u0.kronecker(&self.v0)
    }

    /// Prior precision of `vec(B)`: `(U0 ⊗ V0)^{-1} = U0^{-1} ⊗ V0^{-1}`.
    pub fn vec_precision(&self) -> Result<DMatrix<f64>> {
        let inv = |m: &DMatrix<f64>, name: &str| {
            Cholesky::new(m.clone())
                .map(|c| c.inverse())
                .ok_or_else(|| Error::Config(format!("{name} is not positive definite")))
        };
        Ok(inv(&self.u0, "U0")?.kronecker(&inv(&self.v0, "V0")?))
    }

    pub fn vec_mean(&self) -> DVector<f64> {
        DVector::from_column_slice(self.m0.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalLinearState {
    pub b: DMatrix<f64>,
    pub omega: f64,
}

impl LocalLinearState {
    /// Fitted nuisance `x̃ᵀ B z̃` for one design row.
    pub fn linear_fit(&self, row: &DesignRow) -> f64 {
        row.kron
            .iter()
            .zip(self.b.as_slice())
            .map(|(k, b)| k * b)
            .sum()
    }
}

/// The `B` full conditional for a fixed design and kernel weights.
///
/// The weighted Gram matrix `Σ k_i u_i u_iᵀ` does not depend on the trees or on
/// `ω`, so it is formed once per bandwidth.
#[derive(Clone, Debug)]
pub struct BConditional {
    gram: DMatrix<f64>,
    prior_precision: DMatrix<f64>,
    prior_shift: DVector<f64>,
    rows_b: usize,
    cols_b: usize,
}

impl BConditional {
    pub fn new(rows: &[DesignRow], prior: &LocalLinearPrior) -> Result<Self> {
        prior.validate()?;
        let dim = prior.rows() * prior.cols();
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        for row in rows.iter().filter(|r| r.weight > 0.0) {
            if row.kron.len() != dim {
                return Err(Error::Domain(format!(
                    "design row has {} regressors, prior expects {dim}",
                    row.kron.len()
                )));
            }
            let u = DVector::from_column_slice(&row.kron);
            gram.ger(row.weight, &u, &u, 1.0);
        }
        let prior_precision = prior.vec_precision()?;
        let prior_shift = &prior_precision * prior.vec_mean();
        Ok(Self {
            gram,
            prior_precision,
            prior_shift,
            rows_b: prior.rows(),
            cols_b: prior.cols(),
        })
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Posterior mean of `vec(B)` and the Cholesky factor of the posterior precision.
    pub fn posterior(
        &self,
        rows: &[DesignRow],
        residuals: &[f64],
        omega: f64,
    ) -> Result<(DVector<f64>, Cholesky<f64, Dyn>)> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::Numeric(format!("precision must be positive, got {omega}")));
        }
        let dim = self.rows_b * self.cols_b;
        let mut rhs = DVector::<f64>::zeros(dim);
        for (row, &r) in rows.iter().zip(residuals) {
            if row.weight > 0.0 {
                if !r.is_finite() {
                    return Err(Error::Numeric("non-finite residual".into()));
                }
                for (acc, u) in rhs.iter_mut().zip(&row.kron) {
                    *acc += row.weight * r * u;
                }
            }
        }
        rhs *= omega;
        rhs += &self.prior_shift;
        let precision = &self.gram * omega + &self.prior_precision;
        let chol = match Cholesky::new(precision.clone()) {
            Some(c) => c,
            None => Cholesky::new(precision + DMatrix::identity(dim, dim) * JITTER).ok_or_else(
                || Error::Numeric("posterior precision of B is not positive definite".into()),
            )?,
        };
        let mean = chol.solve(&rhs);
        Ok((mean, chol))
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        rows: &[DesignRow],
        residuals: &[f64],
        omega: f64,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        let (mean, chol) = self.posterior(rows, residuals, omega)?;
        let xi = DVector::<f64>::from_fn(mean.len(), |_, _| rng.sample(StandardNormal));
        // Precision = L Lᵀ, so L⁻ᵀ ξ has covariance equal to the posterior covariance.
        let noise = chol
            .l()
            .tr_solve_lower_triangular(&xi)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        let draw = mean + noise;
        Ok(DMatrix::from_column_slice(self.rows_b, self.cols_b, draw.as_slice()))
    }
}

/// Draws `B` given residuals `y_i - W_i τ(z_i)`.
pub fn sample_b<R: Rng + ?Sized>(
    residuals_minus_tau: &[f64],
    rows: &[DesignRow],
    omega: f64,
    prior: &LocalLinearPrior,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    BConditional::new(rows, prior)?.sample(rows, residuals_minus_tau, omega, rng)
}

/// Draws `ω ~ Ga(ν0 + Σk/2, η0 + ½ Σ k r²)` (shape, rate).
pub fn sample_omega<R: Rng + ?Sized>(
    full_residuals: &[f64],
    weights: &[f64],
    prior: &LocalLinearPrior,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = omega_conditional(full_residuals, weights, prior)?;
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numeric(format!("invalid Gamma({shape}, {rate}): {e}")))?;
    Ok(gamma.sample(rng))
}

/// Shape and rate of the `ω` full conditional.
pub fn omega_conditional(
    full_residuals: &[f64],
    weights: &[f64],
    prior: &LocalLinearPrior,
) -> Result<(f64, f64)> {
    let mut sum_k = 0.0;
    let mut sum_kr2 = 0.0;
    for (&r, &k) in full_residuals.iter().zip(weights) {
        if k > 0.0 {
            if !r.is_finite() {
                return Err(Error::Numeric("non-finite residual".into()));
            }
            sum_k += k;
            sum_kr2 += k * r * r;
        }
    }
    Ok((prior.nu0 + 0.5 * sum_k, prior.eta0 + 0.5 * sum_kr2))
}
