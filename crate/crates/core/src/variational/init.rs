//! Starting values: a grid-profile maximum-likelihood fit of the Gaussian
//! spatial error model, mapped into the variational mean.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Result, SarError};
use crate::model::{MissingnessParams, ModelParams, ParamLayout};
use crate::simulate::draw_inverse_gamma;
use crate::spatial::{log_det_a, SpatialWeights};
use crate::transforms::link_forward;

use super::family::VariationalParams;

/// Number of points in the `rho` profile grid.
pub const RHO_GRID_POINTS: usize = 199;

/// `rho` grid `-0.99, -0.98, ..., 0.99` (contains `0` exactly).
pub fn rho_grid() -> Vec<f64> {
    let half = (RHO_GRID_POINTS / 2) as f64;
    (0..RHO_GRID_POINTS).map(|k| (k as f64 - half) / 100.0).collect()
}

/// Maximum-likelihood estimates of the Gaussian model found by profiling.
#[derive(Debug, Clone, PartialEq)]
pub struct MlEstimate {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub rho: f64,
    /// Concentrated log-likelihood up to an additive constant.
    pub profile_loglik: f64,
}

/// Profiles the concentrated Gaussian log-likelihood
/// `-n/2 log sigma2_hat(rho) + log|det A(rho)|` over [`rho_grid`].
pub fn profile_ml(y: &DVector<f64>, x: &DMatrix<f64>, w: &SpatialWeights) -> Result<MlEstimate> {
    let n = y.len();
    if x.nrows() != n {
        return Err(SarError::mismatch("design rows", n, x.nrows()));
    }
    if w.n() != n {
        return Err(SarError::mismatch("weight matrix size", n, w.n()));
    }
    if n <= x.ncols() {
        return Err(SarError::InvalidDimension(format!(
            "{n} responses cannot identify {} coefficients",
            x.ncols()
        )));
    }
    let wy = DVector::from_vec(w.mul_vec(y.as_slice()));
    let mut wx = DMatrix::zeros(n, x.ncols());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        wx.set_column(j, &DVector::from_vec(w.mul_vec(&col)));
    }

    let mut best: Option<MlEstimate> = None;
    for rho in rho_grid() {
        let ay = y - &wy * rho;
        let ax = x - &wx * rho;
        let gram = ax.tr_mul(&ax);
        let chol = gram
            .cholesky()
            .ok_or_else(|| SarError::Singular("design matrix is rank deficient".into()))?;
        let beta = chol.solve(&ax.tr_mul(&ay));
        let resid = &ay - &ax * &beta;
        let sigma2 = resid.norm_squared() / n as f64;
        if !(sigma2 > 0.0) {
            return Err(SarError::Singular("responses are fitted exactly".into()));
        }
        let ll = -0.5 * n as f64 * sigma2.ln() + log_det_a(w, rho)?;
        if best.as_ref().is_none_or(|b| ll > b.profile_loglik) {
            best = Some(MlEstimate {
                beta,
                sigma2,
                rho,
                profile_loglik: ll,
            });
        }
    }
    best.ok_or_else(|| SarError::Singular("profile likelihood is not finite".into()))
}

/// Settings for the starting variational distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSettings {
    pub n_factors: usize,
    /// Starting value of every loading and every entry of `d`.
    pub spread: f64,
    pub gamma_init: f64,
    pub nu_init: f64,
    pub psi_init: f64,
}

impl Default for InitSettings {
    fn default() -> Self {
        Self {
            n_factors: 4,
            spread: 0.01,
            gamma_init: 1.0 + 1e-3,
            nu_init: 4.0,
            psi_init: 0.1,
        }
    }
}

/// Builds the starting `lambda` for `layout` from an ML fit. Latent scales
/// start from `IG(2, 2)` draws taken from `rng`.
pub fn lambda_from_ml<R: Rng + ?Sized>(
    layout: &ParamLayout,
    ml: &MlEstimate,
    settings: &InitSettings,
    rng: &mut R,
) -> Result<VariationalParams> {
    let kind = layout.kind;
    let params = ModelParams {
        beta: ml.beta.clone(),
        sigma2: ml.sigma2,
        rho: ml.rho,
        nu: kind.is_student_t().then_some(settings.nu_init),
        gamma: kind.is_yeo_johnson().then_some(settings.gamma_init),
    };
    let tau = if layout.tau().is_some() {
        Some(
            (0..layout.n_sites)
                .map(|_| draw_inverse_gamma(2.0, 2.0, rng))
                .collect::<Result<Vec<_>>>()
                .map(DVector::from_vec)?,
        )
    } else {
        None
    };
    let psi = layout.n_psi_x.map(|q| MissingnessParams {
        psi_x: DVector::from_element(q, settings.psi_init),
        psi_y: settings.psi_init,
    });
    let mu = link_forward(layout, &params, tau.as_ref(), psi.as_ref())?;
    if settings.n_factors == 0 || settings.n_factors > mu.len() {
        return Err(SarError::InvalidDimension(format!(
            "factor count {} must lie in 1..={}",
            settings.n_factors,
            mu.len()
        )));
    }
    VariationalParams::with_constant_spread(mu, settings.n_factors, settings.spread)
}
