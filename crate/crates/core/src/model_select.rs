//! Deviance information criteria from posterior draws.
//!
//! `DIC1 = -4 E[log p(y | phi)] + 2 log p(y | phi_bar)` with `phi_bar` the
//! constrained-scale posterior mean; `DIC2` plugs in the draw maximising
//! `log p(y | phi) + log p(phi)` instead; `DIC5` is the missing-data
//! analogue on the joint density of the completed responses and the
//! missingness indicators.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Result, SarError};
use crate::likelihoods::{log_prior_constrained, loglik, marginal_loglik_t};
use crate::missingness::log_p_m;
use crate::model::{Dataset, MissingnessParams, ModelKind, ModelParams, Priors};
use crate::transforms::Constrained;

/// Row-aligned posterior draws on the constrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub phi: Vec<ModelParams>,
    pub psi: Option<Vec<MissingnessParams>>,
    /// Imputations aligned with the ascending unobserved sites.
    pub y_u: Option<Vec<Vec<f64>>>,
}

impl PosteriorSamples {
    pub fn new(
        phi: Vec<ModelParams>,
        psi: Option<Vec<MissingnessParams>>,
        y_u: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let n = phi.len();
        if let Some(p) = &psi {
            if p.len() != n {
                return Err(SarError::mismatch("missingness draws", n, p.len()));
            }
        }
        if let Some(y) = &y_u {
            if y.len() != n {
                return Err(SarError::mismatch("imputation draws", n, y.len()));
            }
        }
        Ok(Self { phi, psi, y_u })
    }

    /// Parameter draws only (latent scales are dropped).
    pub fn from_constrained(draws: &[Constrained]) -> Self {
        let phi = draws.iter().map(|c| c.params.clone()).collect();
        let psi = draws.iter().map(|c| c.psi.clone()).collect::<Option<Vec<_>>>();
        Self { phi, psi, y_u: None }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

/// Component-wise average of constrained parameter draws.
pub fn posterior_mean(phi: &[ModelParams]) -> Result<ModelParams> {
    let first = phi
        .first()
        .ok_or_else(|| SarError::Argument("at least one posterior draw is required".into()))?;
    let k = phi.len() as f64;
    let mut beta = DVector::zeros(first.beta.len());
    let (mut sigma2, mut rho, mut nu, mut gamma) = (0.0, 0.0, 0.0, 0.0);
    for p in phi {
        if p.beta.len() != beta.len() || p.nu.is_some() != first.nu.is_some() || p.gamma.is_some() != first.gamma.is_some() {
            return Err(SarError::Argument("posterior draws have inconsistent shapes".into()));
        }
        beta += &p.beta;
        sigma2 += p.sigma2;
        rho += p.rho;
        nu += p.nu.unwrap_or(0.0);
        gamma += p.gamma.unwrap_or(0.0);
    }
    Ok(ModelParams {
        beta: beta / k,
        sigma2: sigma2 / k,
        rho: rho / k,
        nu: first.nu.map(|_| nu / k),
        gamma: first.gamma.map(|_| gamma / k),
    })
}

/// Evaluates `f` on every draw in parallel, keeping draw order, and rejects
/// non-finite values with the offending index.
fn per_draw<F>(n: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    if n == 0 {
        return Err(SarError::Argument("at least one posterior draw is required".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|k| {
            let v = f(k)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(SarError::NonFiniteDraw(k))
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold(0, |best, (k, &s)| if s > scores[best] { k } else { best })
}

/// `-4 mean(loglik) + 2 loglik(posterior mean)`.
pub fn dic1<F>(phi: &[ModelParams], loglik_fn: F) -> Result<f64>
where
    F: Fn(&ModelParams) -> Result<f64> + Sync,
{
    let ll = per_draw(phi.len(), |k| loglik_fn(&phi[k]))?;
    let plug = loglik_fn(&posterior_mean(phi)?)?;
    if !plug.is_finite() {
        return Err(SarError::NonFiniteDraw(phi.len()));
    }
    Ok(-4.0 * mean(&ll) + 2.0 * plug)
}

/// `-4 mean(loglik) + 2 loglik(phi_hat)` with `phi_hat` the draw maximising
/// `loglik + log prior`.
pub fn dic2<F, G>(phi: &[ModelParams], loglik_fn: F, log_prior_fn: G) -> Result<f64>
where
    F: Fn(&ModelParams) -> Result<f64> + Sync,
    G: Fn(&ModelParams) -> Result<f64> + Sync,
{
    let ll = per_draw(phi.len(), |k| loglik_fn(&phi[k]))?;
    let lp = per_draw(phi.len(), |k| log_prior_fn(&phi[k]))?;
    let scores: Vec<f64> = ll.iter().zip(&lp).map(|(a, b)| a + b).collect();
    Ok(-4.0 * mean(&ll) + 2.0 * ll[argmax(&scores)])
}

/// `-4 mean(joint) + 2 joint(k_hat)` where `joint` is the log density of the
/// completed responses and the indicators and `k_hat` maximises
/// `joint + log prior`.
pub fn dic5<F, G>(samples: &PosteriorSamples, joint_loglik_fn: F, log_prior_fn: G) -> Result<f64>
where
    F: Fn(&ModelParams, &MissingnessParams, &[f64]) -> Result<f64> + Sync,
    G: Fn(&ModelParams, &MissingnessParams) -> Result<f64> + Sync,
{
    let psi = samples
        .psi
        .as_ref()
        .ok_or_else(|| SarError::Argument("missing-data criterion needs missingness draws".into()))?;
    let y_u = samples
        .y_u
        .as_ref()
        .ok_or_else(|| SarError::Argument("missing-data criterion needs imputation draws".into()))?;
    let n = samples.len();
    let joint = per_draw(n, |k| joint_loglik_fn(&samples.phi[k], &psi[k], &y_u[k]))?;
    let lp = per_draw(n, |k| log_prior_fn(&samples.phi[k], &psi[k]))?;
    let scores: Vec<f64> = joint.iter().zip(&lp).map(|(a, b)| a + b).collect();
    Ok(-4.0 * mean(&joint) + 2.0 * joint[argmax(&scores)])
}

/// Log-likelihood used for model comparison: the latent scales are
/// integrated out for t-error kinds.
pub fn model_loglik(kind: ModelKind, data: &Dataset, y: &DVector<f64>, params: &ModelParams) -> Result<f64> {
    if kind.is_student_t() {
        marginal_loglik_t(kind, data, y, params)
    } else {
        loglik(kind, data, y, params, None)
    }
}

/// Criteria for one fitted model; absent entries do not apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DicReport {
    pub dic1: Option<f64>,
    pub dic2: Option<f64>,
    pub dic5: Option<f64>,
    pub n_draws: usize,
}

/// `DIC1` and `DIC2` for a complete-data fit.
pub fn dic_full(kind: ModelKind, data: &Dataset, phi: &[ModelParams], priors: &Priors) -> Result<DicReport> {
    let y = data.complete_y()?;
    let ll = |p: &ModelParams| model_loglik(kind, data, &y, p);
    let lp = |p: &ModelParams| log_prior_constrained(kind, p, None, priors);
    Ok(DicReport {
        dic1: Some(dic1(phi, ll)?),
        dic2: Some(dic2(phi, ll, lp)?),
        dic5: None,
        n_draws: phi.len(),
    })
}

/// `DIC5` for a missing-data fit.
pub fn dic_missing(kind: ModelKind, data: &Dataset, samples: &PosteriorSamples, priors: &Priors) -> Result<DicReport> {
    let pattern = data.missing_pattern();
    let joint = |p: &ModelParams, psi: &MissingnessParams, y_u: &[f64]| {
        let y = pattern.complete(y_u)?;
        Ok(model_loglik(kind, data, &y, p)? + log_p_m(&pattern.m, &y, &data.xstar, psi)?)
    };
    let lp = |p: &ModelParams, psi: &MissingnessParams| log_prior_constrained(kind, p, Some(psi), priors);
    Ok(DicReport {
        dic1: None,
        dic2: None,
        dic5: Some(dic5(samples, joint, lp)?),
        n_draws: samples.len(),
    })
}

/// Posterior mean and equal-tailed 95% interval of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Linear-interpolation quantile of sorted data (`p` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summaries of each column of `rows` (one row per draw).
pub fn summarize(names: &[String], rows: &[Vec<f64>]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(SarError::Argument("at least one posterior draw is required".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != names.len()) {
        return Err(SarError::mismatch("draw width", names.len(), bad.len()));
    }
    Ok(names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.sort_by(f64::total_cmp);
            SummaryRow {
                name: name.clone(),
                mean,
                lower: quantile_sorted(&col, 0.025),
                upper: quantile_sorted(&col, 0.975),
            }
        })
        .collect())
}
