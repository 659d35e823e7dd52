//! Gaussian variational family with factor covariance `B B^T + D^2`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SarError};

/// Variational parameters `lambda = (mu, B, d)`.
///
/// `B` is `s x p` with a zero strict upper triangle; `d` is stored
/// unconstrained because only `d * d` enters the covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub mu: DVector<f64>,
    pub b: DMatrix<f64>,
    pub d: DVector<f64>,
}

/// Number of free entries of an `s x p` lower-trapezoidal matrix.
pub fn vech_len(s: usize, p: usize) -> usize {
    (0..p.min(s)).map(|j| s - j).sum()
}

impl VariationalParams {
    pub fn new(mu: DVector<f64>, b: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let s = mu.len();
        if b.nrows() != s {
            return Err(SarError::mismatch("factor loading rows", s, b.nrows()));
        }
        if d.len() != s {
            return Err(SarError::mismatch("diagonal scale", s, d.len()));
        }
        if b.ncols() == 0 || b.ncols() > s {
            return Err(SarError::InvalidDimension(format!(
                "factor count {} must lie in 1..={s}",
                b.ncols()
            )));
        }
        let mut lambda = Self { mu, b, d };
        lambda.mask_upper();
        Ok(lambda)
    }

    /// `mu` with every loading and scale set to `fill`.
    pub fn with_constant_spread(mu: DVector<f64>, n_factors: usize, fill: f64) -> Result<Self> {
        let s = mu.len();
        let b = DMatrix::from_element(s, n_factors, fill);
        let d = DVector::from_element(s, fill);
        Self::new(mu, b, d)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn n_factors(&self) -> usize {
        self.b.ncols()
    }

    fn mask_upper(&mut self) {
        for j in 0..self.b.ncols() {
            for i in 0..j.min(self.b.nrows()) {
                self.b[(i, j)] = 0.0;
            }
        }
    }

    /// Length of the flattened `(mu, vech B, d)` vector.
    pub fn flat_len(&self) -> usize {
        2 * self.dim() + vech_len(self.dim(), self.n_factors())
    }

    /// `(mu, vech B, d)` concatenated.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.flat_len());
        v.extend(self.mu.iter());
        for j in 0..self.n_factors() {
            v.extend((j..self.dim()).map(|i| self.b[(i, j)]));
        }
        v.extend(self.d.iter());
        DVector::from_vec(v)
    }

    /// Adds a step laid out like [`VariationalParams::to_flat`].
    pub fn apply_step(&mut self, step: &DVector<f64>) -> Result<()> {
        if step.len() != self.flat_len() {
            return Err(SarError::mismatch("variational step", self.flat_len(), step.len()));
        }
        let s = self.dim();
        let mut k = 0;
        for i in 0..s {
            self.mu[i] += step[k];
            k += 1;
        }
        for j in 0..self.n_factors() {
            for i in j..s {
                self.b[(i, j)] += step[k];
                k += 1;
            }
        }
        for i in 0..s {
            self.d[i] += step[k];
            k += 1;
        }
        Ok(())
    }

    /// `B B^T + D^2` as a dense matrix (diagnostics and small oracles only).
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.b * self.b.transpose() + DMatrix::from_diagonal(&self.d.map(|x| x * x))
    }

    /// Marginal standard deviations `sqrt(diag(B B^T + D^2))`.
    pub fn marginal_sd(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            (self.b.row(i).norm_squared() + self.d[i] * self.d[i]).sqrt()
        })
    }

    fn woodbury(&self) -> Result<Woodbury> {
        let inv_d2 = self.d.map(|x| 1.0 / (x * x));
        if inv_d2.iter().any(|v| !v.is_finite()) {
            return Err(SarError::Singular("variational scale d has a zero entry".into()));
        }
        let p = self.n_factors();
        let mut cap = DMatrix::identity(p, p);
        let scaled_b = DMatrix::from_fn(self.dim(), p, |i, j| self.b[(i, j)] * inv_d2[i]);
        cap += self.b.transpose() * &scaled_b;
        let chol = Cholesky::new(cap)
            .ok_or_else(|| SarError::Singular("capacitance matrix is not positive definite".into()))?;
        Ok(Woodbury {
            inv_d2,
            scaled_b,
            chol,
        })
    }

    /// `(B B^T + D^2)^-1 v` by the Woodbury identity.
    pub fn precision_mul(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(SarError::mismatch("vector", self.dim(), v.len()));
        }
        Ok(self.woodbury()?.apply(v))
    }

    /// `log q_lambda(theta)`.
    pub fn log_density(&self, theta: &DVector<f64>) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(SarError::mismatch("vector", self.dim(), theta.len()));
        }
        let wb = self.woodbury()?;
        let diff = theta - &self.mu;
        let quad = diff.dot(&wb.apply(&diff));
        let log_det_cap: f64 = 2.0 * wb.chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let log_det = self.d.iter().map(|x| (x * x).ln()).sum::<f64>() + log_det_cap;
        Ok(-0.5 * (self.dim() as f64 * (2.0 * PI).ln() + log_det + quad))
    }
}

struct Woodbury {
    inv_d2: DVector<f64>,
    scaled_b: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Woodbury {
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let dv = v.component_mul(&self.inv_d2);
        let inner = self.chol.solve(&self.scaled_b.tr_mul(v));
        dv - &self.scaled_b * inner
    }
}

/// A reparameterised draw `theta = mu + B eta + d * eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct QDraw {
    pub theta: DVector<f64>,
    pub eta: DVector<f64>,
    pub eps: DVector<f64>,
}

/// Draws `eta` (length `p`) then `eps` (length `s`) and forms `theta`.
pub fn sample_q<R: Rng + ?Sized>(lambda: &VariationalParams, rng: &mut R) -> QDraw {
    let eta = DVector::from_fn(lambda.n_factors(), |_, _| rng.sample(StandardNormal));
    let eps = DVector::from_fn(lambda.dim(), |_, _| rng.sample(StandardNormal));
    let theta = &lambda.mu + &lambda.b * &eta + lambda.d.component_mul(&eps);
    QDraw { theta, eta, eps }
}

/// `grad_theta log q_lambda(theta) = -(B B^T + D^2)^-1 (theta - mu)`.
pub fn grad_log_q0(lambda: &VariationalParams, theta: &DVector<f64>) -> Result<DVector<f64>> {
    if theta.len() != lambda.dim() {
        return Err(SarError::mismatch("vector", lambda.dim(), theta.len()));
    }
    Ok(-lambda.precision_mul(&(theta - &lambda.mu))?)
}

/// Reparameterisation gradients of the ELBO with respect to `(mu, vech B, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamGrads {
    pub mu: DVector<f64>,
    /// Full `s x p` matrix whose strict upper triangle is zero.
    pub b: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl ReparamGrads {
    /// Gradients from the combined `g = grad log h - grad log q`.
    pub fn from_combined(g: &DVector<f64>, eta: &DVector<f64>, eps: &DVector<f64>) -> Result<Self> {
        let s = g.len();
        if eps.len() != s {
            return Err(SarError::mismatch("eps", s, eps.len()));
        }
        let p = eta.len();
        let b = DMatrix::from_fn(s, p, |i, j| if j <= i { g[i] * eta[j] } else { 0.0 });
        Ok(Self {
            mu: g.clone(),
            b,
            d: g.component_mul(eps),
        })
    }

    /// Flattened like [`VariationalParams::to_flat`].
    pub fn to_flat(&self) -> DVector<f64> {
        let s = self.mu.len();
        let p = self.b.ncols();
        let mut v = Vec::with_capacity(2 * s + vech_len(s, p));
        v.extend(self.mu.iter());
        for j in 0..p {
            v.extend((j..s).map(|i| self.b[(i, j)]));
        }
        v.extend(self.d.iter());
        DVector::from_vec(v)
    }
}

/// Reparameterisation gradients when `grad_log_h` is the gradient of the
/// target alone; the `-grad log q` correction `(BB^T + D^2)^-1 (B eta + d * eps)`
/// is added here.
pub fn reparam_grads(
    lambda: &VariationalParams,
    eta: &DVector<f64>,
    eps: &DVector<f64>,
    grad_log_h: &DVector<f64>,
) -> Result<ReparamGrads> {
    let s = lambda.dim();
    if grad_log_h.len() != s {
        return Err(SarError::mismatch("gradient", s, grad_log_h.len()));
    }
    if eta.len() != lambda.n_factors() {
        return Err(SarError::mismatch("eta", lambda.n_factors(), eta.len()));
    }
    if eps.len() != s {
        return Err(SarError::mismatch("eps", s, eps.len()));
    }
    let offset = &lambda.b * eta + lambda.d.component_mul(eps);
    let g = grad_log_h + lambda.precision_mul(&offset)?;
    ReparamGrads::from_combined(&g, eta, eps)
}
