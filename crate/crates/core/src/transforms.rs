//! Yeo-Johnson response transform and the real-line links for constrained
//! parameters.

use nalgebra::DVector;

use crate::error::{Result, SarError};
use crate::model::{MissingnessParams, ModelParams, ParamLayout};

/// Smallest admissible base before the fractional power in the inverse transform.
const INVERSE_GUARD: f64 = 1e-12;

/// Yeo-Johnson parameter, strictly inside `(0, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct YjParam(f64);

impl YjParam {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma < 2.0 {
            Ok(Self(gamma))
        } else {
            Err(SarError::Domain(format!("gamma = {gamma} must lie in (0, 2)")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `t_gamma(y)`.
    pub fn forward(self, y: f64) -> f64 {
        let g = self.0;
        if g == 1.0 {
            return y;
        }
        if y >= 0.0 {
            ((y + 1.0).powf(g) - 1.0) / g
        } else {
            let k = 2.0 - g;
            -((1.0 - y).powf(k) - 1.0) / k
        }
    }

    /// `t_gamma^{-1}(z)`.
    pub fn inverse(self, z: f64) -> Result<f64> {
        let g = self.0;
        if g == 1.0 && !z.is_nan() {
            return Ok(z);
        }
        if z >= 0.0 {
            let base = z * g + 1.0;
            if !(base > INVERSE_GUARD) {
                return Err(SarError::Domain(format!("z = {z} outside the image at gamma = {g}")));
            }
            Ok(base.powf(1.0 / g) - 1.0)
        } else {
            let k = 2.0 - g;
            let base = 1.0 - k * z;
            if !(base > INVERSE_GUARD) {
                return Err(SarError::Domain(format!("z = {z} outside the image at gamma = {g}")));
            }
            Ok(1.0 - base.powf(1.0 / k))
        }
    }

    /// `d t_gamma(y) / dy`.
    pub fn dy(self, y: f64) -> f64 {
        let g = self.0;
        if y >= 0.0 {
            (y + 1.0).powf(g - 1.0)
        } else {
            (1.0 - y).powf(1.0 - g)
        }
    }

    /// `log(d t_gamma(y) / dy)`, evaluated without exponentiating.
    pub fn log_dy(self, y: f64) -> f64 {
        let g = self.0;
        if y >= 0.0 {
            (g - 1.0) * y.ln_1p()
        } else {
            (1.0 - g) * (-y).ln_1p()
        }
    }

    /// `d t_gamma(y) / d gamma`.
    pub fn dgamma(self, y: f64) -> f64 {
        let g = self.0;
        if y >= 0.0 {
            let l = y.ln_1p();
            let p = (y + 1.0).powf(g);
            (p * (g * l - 1.0) + 1.0) / (g * g)
        } else {
            let k = 2.0 - g;
            let l = (-y).ln_1p();
            let p = (1.0 - y).powf(k);
            (k * p * l - p + 1.0) / (k * k)
        }
    }
}

/// `d log(d t_gamma(y)/dy) / d gamma`, which does not depend on `gamma`.
pub fn yj_dlogdy_dgamma(y: f64) -> f64 {
    if y >= 0.0 {
        y.ln_1p()
    } else {
        -(-y).ln_1p()
    }
}

pub fn yj_forward(y: f64, gamma: f64) -> Result<f64> {
    Ok(YjParam::new(gamma)?.forward(y))
}

pub fn yj_inverse(z: f64, gamma: f64) -> Result<f64> {
    YjParam::new(gamma)?.inverse(z)
}

pub fn yj_dy(y: f64, gamma: f64) -> Result<f64> {
    Ok(YjParam::new(gamma)?.dy(y))
}

pub fn yj_dgamma(y: f64, gamma: f64) -> Result<f64> {
    Ok(YjParam::new(gamma)?.dgamma(y))
}

/// `rho' = log(1 + rho) - log(1 - rho)`.
pub fn rho_to_link(rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(SarError::Domain(format!("rho = {rho} must satisfy |rho| < 1")));
    }
    Ok(rho.ln_1p() - (-rho).ln_1p())
}

/// Inverse of [`rho_to_link`]: `rho = tanh(rho' / 2)`.
pub fn rho_from_link(link: f64) -> f64 {
    (0.5 * link).tanh()
}

/// `gamma' = log(gamma) - log(2 - gamma)`.
pub fn gamma_to_link(gamma: f64) -> Result<f64> {
    let g = YjParam::new(gamma)?.get();
    Ok(g.ln() - (2.0 - g).ln())
}

/// Inverse of [`gamma_to_link`]: `gamma = 1 + tanh(gamma' / 2)`.
pub fn gamma_from_link(link: f64) -> f64 {
    1.0 + (0.5 * link).tanh()
}

/// `nu' = log(nu - 3)`.
pub fn nu_to_link(nu: f64) -> Result<f64> {
    if !(nu > 3.0) || !nu.is_finite() {
        return Err(SarError::Domain(format!("nu = {nu} must exceed 3")));
    }
    Ok((nu - 3.0).ln())
}

pub fn nu_from_link(link: f64) -> f64 {
    link.exp() + 3.0
}

/// `2 e^x / (1 + e^x)^2`, written through `tanh` so it cannot overflow.
fn logistic_link_slope(link: f64) -> f64 {
    let h = (0.5 * link).tanh();
    0.5 * (1.0 - h * h)
}

/// Derivatives of each constrained parameter with respect to its link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkJacobians {
    pub dsigma2: f64,
    pub drho: f64,
    pub dnu: Option<f64>,
    pub dgamma: Option<f64>,
    pub dtau: Option<DVector<f64>>,
}

/// Evaluates the link Jacobians at an unconstrained vector.
pub fn link_jacobians(layout: &ParamLayout, theta: &DVector<f64>) -> Result<LinkJacobians> {
    check_theta_len(layout, theta)?;
    Ok(LinkJacobians {
        dsigma2: theta[layout.omega()].exp(),
        drho: logistic_link_slope(theta[layout.rho()]),
        dnu: layout.nu().map(|i| theta[i].exp()),
        dgamma: layout.gamma().map(|i| logistic_link_slope(theta[i])),
        dtau: layout.tau().map(|r| theta.rows_range(r).map(f64::exp)),
    })
}

/// `d rho / d rho'`, i.e. `2 e^x / (1 + e^x)^2`.
pub fn rho_link_slope(link: f64) -> f64 {
    logistic_link_slope(link)
}

/// `d gamma / d gamma'`, same functional form as the `rho` link.
pub fn gamma_link_slope(link: f64) -> f64 {
    logistic_link_slope(link)
}

fn check_theta_len(layout: &ParamLayout, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != layout.len() {
        return Err(SarError::mismatch("unconstrained vector", layout.len(), theta.len()));
    }
    Ok(())
}

/// Everything recovered from an unconstrained vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Constrained {
    pub params: ModelParams,
    pub tau: Option<DVector<f64>>,
    pub psi: Option<MissingnessParams>,
}

/// Maps constrained parameters to the unconstrained vector.
pub fn link_forward(
    layout: &ParamLayout,
    params: &ModelParams,
    tau: Option<&DVector<f64>>,
    psi: Option<&MissingnessParams>,
) -> Result<DVector<f64>> {
    params.validate(layout.kind)?;
    if params.beta.len() != layout.n_beta {
        return Err(SarError::mismatch("beta", layout.n_beta, params.beta.len()));
    }
    let mut theta = DVector::zeros(layout.len());
    theta.rows_range_mut(layout.beta()).copy_from(&params.beta);
    theta[layout.omega()] = params.sigma2.ln();
    theta[layout.rho()] = rho_to_link(params.rho)?;
    if let (Some(i), Some(nu)) = (layout.nu(), params.nu) {
        theta[i] = nu_to_link(nu)?;
    }
    if let (Some(i), Some(g)) = (layout.gamma(), params.gamma) {
        theta[i] = gamma_to_link(g)?;
    }
    if let Some(range) = layout.tau() {
        let tau = tau.ok_or_else(|| SarError::Argument("t-error model requires tau".into()))?;
        if tau.len() != layout.n_sites {
            return Err(SarError::mismatch("tau", layout.n_sites, tau.len()));
        }
        for (k, i) in range.enumerate() {
            if !(tau[k] > 0.0) {
                return Err(SarError::Domain(format!("tau[{k}] = {} must be positive", tau[k])));
            }
            theta[i] = tau[k].ln();
        }
    }
    if let (Some(range), Some(iy)) = (layout.psi_x(), layout.psi_y()) {
        let psi = psi.ok_or_else(|| SarError::Argument("missingness coefficients required".into()))?;
        if psi.psi_x.len() != range.len() {
            return Err(SarError::mismatch("psi_x", range.len(), psi.psi_x.len()));
        }
        theta.rows_range_mut(range).copy_from(&psi.psi_x);
        theta[iy] = psi.psi_y;
    }
    Ok(theta)
}

/// Maps an unconstrained vector back to constrained parameters.
pub fn link_inverse(layout: &ParamLayout, theta: &DVector<f64>) -> Result<Constrained> {
    check_theta_len(layout, theta)?;
    if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
        return Err(SarError::Domain(format!("unconstrained coordinate {i} is not finite")));
    }
    let params = ModelParams {
        beta: theta.rows_range(layout.beta()).into_owned(),
        sigma2: theta[layout.omega()].exp(),
        rho: rho_from_link(theta[layout.rho()]),
        nu: layout.nu().map(|i| nu_from_link(theta[i])),
        gamma: layout.gamma().map(|i| gamma_from_link(theta[i])),
    };
    // Saturated links would put a parameter on its boundary.
    if !(params.rho.abs() < 1.0) || !(params.sigma2 > 0.0) || !params.sigma2.is_finite() {
        return Err(SarError::Domain("unconstrained vector maps onto a parameter boundary".into()));
    }
    if params.gamma.is_some_and(|g| !(g > 0.0 && g < 2.0)) || params.nu.is_some_and(|v| !v.is_finite()) {
        return Err(SarError::Domain("unconstrained vector maps onto a parameter boundary".into()));
    }
    let tau = layout.tau().map(|r| theta.rows_range(r).map(f64::exp));
    if tau.as_ref().is_some_and(|t| t.iter().any(|v| !(*v > 0.0) || !v.is_finite())) {
        return Err(SarError::Domain("latent scale overflow".into()));
    }
    let psi = match (layout.psi_x(), layout.psi_y()) {
        (Some(r), Some(iy)) => Some(MissingnessParams {
            psi_x: theta.rows_range(r).into_owned(),
            psi_y: theta[iy],
        }),
        _ => None,
    };
    Ok(Constrained { params, tau, psi })
}
