//! Log-likelihoods, priors and the composite `log h` targets.
//!
//! Every target takes a fully completed response vector; the missing-data
//! target places the imputed values into the unobserved slots first.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, SarError};
use crate::missingness::log_p_m;
use crate::model::{Dataset, MissingPattern, MissingnessParams, ModelKind, ModelParams, ParamLayout, Priors};
use crate::spatial::{apply_a_unchecked, log_det_a, SpatialWeights};
use crate::transforms::{link_inverse, YjParam};

/// `r = y - X beta` or `t_gamma(y) - X beta`.
pub fn residual_r(
    kind: ModelKind,
    y_complete: &DVector<f64>,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    gamma: Option<f64>,
) -> Result<DVector<f64>> {
    if x.nrows() != y_complete.len() {
        return Err(SarError::mismatch("design rows", y_complete.len(), x.nrows()));
    }
    if x.ncols() != beta.len() {
        return Err(SarError::mismatch("beta", x.ncols(), beta.len()));
    }
    if y_complete.iter().any(|v| !v.is_finite()) {
        return Err(SarError::Argument("response vector has non-finite entries".into()));
    }
    let mean = x * beta;
    if kind.is_yeo_johnson() {
        let g = gamma.ok_or_else(|| SarError::Argument(format!("{kind} requires gamma")))?;
        let t = YjParam::new(g)?;
        Ok(DVector::from_fn(y_complete.len(), |i, _| t.forward(y_complete[i]) - mean[i]))
    } else {
        Ok(y_complete - mean)
    }
}

/// `sum_i log(d t_gamma(y_i) / dy_i)`, zero for identity kinds.
pub fn log_jacobian(kind: ModelKind, y_complete: &DVector<f64>, gamma: Option<f64>) -> Result<f64> {
    if !kind.is_yeo_johnson() {
        return Ok(0.0);
    }
    let g = gamma.ok_or_else(|| SarError::Argument(format!("{kind} requires gamma")))?;
    let t = YjParam::new(g)?;
    Ok(y_complete.iter().map(|&y| t.log_dy(y)).sum())
}

fn check_common(kind: ModelKind, data: &Dataset, y: &DVector<f64>, params: &ModelParams) -> Result<()> {
    params.validate(kind)?;
    if y.len() != data.n() {
        return Err(SarError::mismatch("responses", data.n(), y.len()));
    }
    Ok(())
}

fn tau_slice(kind: ModelKind, n: usize, tau: Option<&DVector<f64>>) -> Result<Option<&[f64]>> {
    if !kind.is_student_t() {
        return Ok(None);
    }
    let tau = tau.ok_or_else(|| SarError::Argument("t-error model requires tau".into()))?;
    if tau.len() != n {
        return Err(SarError::mismatch("tau", n, tau.len()));
    }
    if tau.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(SarError::Domain("tau entries must be positive".into()));
    }
    Ok(Some(tau.as_slice()))
}

/// Pieces of the Gaussian kernel shared by likelihood and gradient code.
pub(crate) struct KernelTerms {
    pub r: DVector<f64>,
    /// `A r`.
    pub ar: Vec<f64>,
    /// `diag(tau)^-1 A r` (equal to `ar` for Gaussian kinds).
    pub b: Vec<f64>,
    /// `r^T M r`.
    pub quad: f64,
    pub log_det_a: f64,
}

pub(crate) fn kernel_terms(
    kind: ModelKind,
    w: &SpatialWeights,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &ModelParams,
    tau: Option<&[f64]>,
) -> Result<KernelTerms> {
    let r = residual_r(kind, y, x, &params.beta, params.gamma)?;
    let ar = apply_a_unchecked(w, params.rho, r.as_slice());
    let b: Vec<f64> = match tau {
        Some(t) => ar.iter().zip(t).map(|(a, t)| a / t).collect(),
        None => ar.clone(),
    };
    let quad = ar.iter().zip(&b).map(|(a, b)| a * b).sum();
    let log_det_a = log_det_a(w, params.rho)?;
    Ok(KernelTerms {
        r,
        ar,
        b,
        quad,
        log_det_a,
    })
}

/// Gaussian (conditionally on `tau`) log-likelihood of the complete responses,
/// including the `2 pi` constant and the transform Jacobian for YJ kinds.
pub fn loglik(
    kind: ModelKind,
    data: &Dataset,
    y_complete: &DVector<f64>,
    params: &ModelParams,
    tau: Option<&DVector<f64>>,
) -> Result<f64> {
    check_common(kind, data, y_complete, params)?;
    let n = data.n() as f64;
    let tau = tau_slice(kind, data.n(), tau)?;
    let k = kernel_terms(kind, &data.weights, &data.x, y_complete, params, tau)?;
    let log_det_m = 2.0 * k.log_det_a - tau.map_or(0.0, |t| t.iter().map(|v| v.ln()).sum());
    Ok(-0.5 * n * (2.0 * PI).ln() - 0.5 * n * params.sigma2.ln() + 0.5 * log_det_m
        - k.quad / (2.0 * params.sigma2)
        + log_jacobian(kind, y_complete, params.gamma)?)
}

/// Multivariate-t log density with the latent scales integrated out
/// (location `X beta`, scale `sigma2 (A^T A)^-1`, `nu` degrees of freedom).
pub fn marginal_loglik_t(kind: ModelKind, data: &Dataset, y_complete: &DVector<f64>, params: &ModelParams) -> Result<f64> {
    if !kind.is_student_t() {
        return Err(SarError::Argument(format!("{kind} has Gaussian errors")));
    }
    check_common(kind, data, y_complete, params)?;
    let nu = params.nu.expect("validated");
    let n = data.n() as f64;
    let gauss = ModelKind::new(crate::model::ErrorFamily::Gaussian, kind.transform);
    let k = kernel_terms(gauss, &data.weights, &data.x, y_complete, params, None)?;
    Ok(ln_gamma(0.5 * (nu + n)) - ln_gamma(0.5 * nu) + k.log_det_a
        - 0.5 * n * (PI * nu * params.sigma2).ln()
        - 0.5 * (n + nu) * (k.quad / (nu * params.sigma2)).ln_1p()
        + log_jacobian(kind, y_complete, params.gamma)?)
}

/// Log density of `IG(shape, rate)` at `x`.
pub fn log_inverse_gamma(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// Prior on the unconstrained vector, up to an additive constant.
///
/// Zero-mean Gaussian kernels on every non-latent coordinate, plus for
/// t-error kinds `sum_i [log IG(tau_i; nu/2, nu/2) + tau'_i]`.
pub fn log_prior(layout: &ParamLayout, theta: &DVector<f64>, priors: &Priors) -> Result<f64> {
    if theta.len() != layout.len() {
        return Err(SarError::mismatch("unconstrained vector", layout.len(), theta.len()));
    }
    let sq = |range: std::ops::Range<usize>| theta.rows_range(range).norm_squared();
    let mut lp = -sq(layout.beta()) / (2.0 * priors.var_beta)
        - theta[layout.omega()].powi(2) / (2.0 * priors.var_omega)
        - theta[layout.rho()].powi(2) / (2.0 * priors.var_rho);
    if let Some(i) = layout.nu() {
        lp -= theta[i].powi(2) / (2.0 * priors.var_nu);
    }
    if let Some(i) = layout.gamma() {
        lp -= theta[i].powi(2) / (2.0 * priors.var_gamma);
    }
    if let (Some(range), Some(inu)) = (layout.tau(), layout.nu()) {
        let half_nu = 0.5 * crate::transforms::nu_from_link(theta[inu]);
        let constant = half_nu * half_nu.ln() - ln_gamma(half_nu);
        for i in range {
            let t = theta[i];
            // log IG at tau = e^t plus the log-Jacobian t.
            lp += constant - (half_nu + 1.0) * t - half_nu * (-t).exp() + t;
        }
    }
    if let (Some(range), Some(iy)) = (layout.psi_x(), layout.psi_y()) {
        lp -= (sq(range) + theta[iy].powi(2)) / (2.0 * priors.var_psi);
    }
    Ok(lp)
}

/// Log prior of constrained parameters, evaluated through the link functions
/// without the latent scales (used to rank posterior draws).
pub fn log_prior_constrained(
    kind: ModelKind,
    params: &ModelParams,
    psi: Option<&MissingnessParams>,
    priors: &Priors,
) -> Result<f64> {
    let n_psi = psi.map(|p| p.psi_x.len());
    let layout = ParamLayout {
        kind: ModelKind::new(crate::model::ErrorFamily::Gaussian, kind.transform),
        n_beta: params.beta.len(),
        n_sites: 0,
        n_psi_x: n_psi,
    };
    let stripped = ModelParams {
        nu: None,
        ..params.clone()
    };
    let theta = crate::transforms::link_forward(&layout, &stripped, None, psi)?;
    let mut lp = log_prior(&layout, &theta, priors)?;
    if let Some(nu) = params.nu {
        lp -= crate::transforms::nu_to_link(nu)?.powi(2) / (2.0 * priors.var_nu);
    }
    Ok(lp)
}

fn check_y(data: &Dataset, y: &DVector<f64>) -> Result<()> {
    if y.len() != data.n() {
        return Err(SarError::mismatch("responses", data.n(), y.len()));
    }
    Ok(())
}

/// `log h(theta) = log p(y | theta) + log p(theta)` for complete data.
pub fn log_h_full(
    kind: ModelKind,
    data: &Dataset,
    y_complete: &DVector<f64>,
    theta: &DVector<f64>,
    priors: &Priors,
) -> Result<f64> {
    check_y(data, y_complete)?;
    let layout = ParamLayout::for_full_data(kind, data);
    let c = link_inverse(&layout, theta)?;
    Ok(loglik(kind, data, y_complete, &c.params, c.tau.as_ref())? + log_prior(&layout, theta, priors)?)
}

/// Missing-data target: `log h_full` on the completed responses plus the
/// missingness log-pmf and the prior on its coefficients.
pub fn log_h_missing(
    kind: ModelKind,
    data: &Dataset,
    pattern: &MissingPattern,
    theta: &DVector<f64>,
    y_u: &[f64],
    priors: &Priors,
) -> Result<f64> {
    let layout = ParamLayout::for_missing_data(kind, data);
    let c = link_inverse(&layout, theta)?;
    let y = pattern.complete(y_u)?;
    check_y(data, &y)?;
    let psi = c.psi.as_ref().expect("missing-data layout carries psi");
    Ok(loglik(kind, data, &y, &c.params, c.tau.as_ref())?
        + log_p_m(&pattern.m, &y, &data.xstar, psi)?
        + log_prior(&layout, theta, priors)?)
}
