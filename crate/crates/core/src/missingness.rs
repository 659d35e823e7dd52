//! Logistic missing-not-at-random mechanism.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Result, SarError};
use crate::model::MissingnessParams;

/// Beyond this magnitude the log-sum-exp tails are replaced by their asymptotes.
pub const LOGISTIC_CUTOVER: f64 = 35.0;

/// `log(1 + e^x)` without overflow or cancellation.
pub fn softplus(x: f64) -> f64 {
    if x > LOGISTIC_CUTOVER {
        x + (-x).exp()
    } else if x < -LOGISTIC_CUTOVER {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + e^-x)`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Linear predictor `x*_i^T psi_x + y_i psi_y`.
pub fn linear_predictor(y_i: f64, xstar_i: &[f64], psi: &MissingnessParams) -> f64 {
    xstar_i.iter().zip(psi.psi_x.iter()).map(|(a, b)| a * b).sum::<f64>() + y_i * psi.psi_y
}

/// Probability that site `i` is missing.
pub fn missing_prob(y_i: f64, xstar_i: &[f64], psi: &MissingnessParams) -> Result<f64> {
    if xstar_i.len() != psi.psi_x.len() {
        return Err(SarError::mismatch("missingness covariates", psi.psi_x.len(), xstar_i.len()));
    }
    Ok(logistic(linear_predictor(y_i, xstar_i, psi)))
}

fn check_dims(n: usize, y: &DVector<f64>, xstar: &DMatrix<f64>, psi: &MissingnessParams) -> Result<()> {
    if y.len() != n {
        return Err(SarError::mismatch("responses", n, y.len()));
    }
    if xstar.nrows() != n {
        return Err(SarError::mismatch("missingness design rows", n, xstar.nrows()));
    }
    if xstar.ncols() != psi.psi_x.len() {
        return Err(SarError::mismatch("missingness design columns", psi.psi_x.len(), xstar.ncols()));
    }
    Ok(())
}

/// Linear predictors for all sites.
pub fn linear_predictors(y: &DVector<f64>, xstar: &DMatrix<f64>, psi: &MissingnessParams) -> DVector<f64> {
    xstar * &psi.psi_x + y * psi.psi_y
}

/// `log p(m | y, psi) = sum_i [m_i eta_i - log(1 + e^eta_i)]`.
pub fn log_p_m(m: &[bool], y: &DVector<f64>, xstar: &DMatrix<f64>, psi: &MissingnessParams) -> Result<f64> {
    check_dims(m.len(), y, xstar, psi)?;
    let eta = linear_predictors(y, xstar, psi);
    Ok(m.iter()
        .zip(eta.iter())
        .map(|(&mi, &e)| if mi { e - softplus(e) } else { -softplus(e) })
        .sum())
}

/// Per-site `log p(m_i | y_i, psi)`.
pub fn log_p_m_sites(m: &[bool], y: &DVector<f64>, xstar: &DMatrix<f64>, psi: &MissingnessParams) -> Result<Vec<f64>> {
    check_dims(m.len(), y, xstar, psi)?;
    let eta = linear_predictors(y, xstar, psi);
    Ok(m.iter()
        .zip(eta.iter())
        .map(|(&mi, &e)| if mi { e - softplus(e) } else { -softplus(e) })
        .collect())
}

/// Draws `m_i ~ Bernoulli(missing_prob_i)` independently.
pub fn simulate_missing<R: Rng + ?Sized>(
    y: &DVector<f64>,
    xstar: &DMatrix<f64>,
    psi: &MissingnessParams,
    rng: &mut R,
) -> Result<Vec<bool>> {
    check_dims(y.len(), y, xstar, psi)?;
    let eta = linear_predictors(y, xstar, psi);
    Ok(eta.iter().map(|&e| rng.random::<f64>() < logistic(e)).collect())
}
