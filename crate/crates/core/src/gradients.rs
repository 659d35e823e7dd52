//! Analytic gradients of the `log h` targets on the unconstrained scale.

use nalgebra::DVector;
use statrs::function::gamma::digamma;

use crate::error::{Result, SarError};
use crate::likelihoods::kernel_terms;
use crate::missingness::{linear_predictors, logistic};
use crate::model::{Dataset, MissingPattern, ModelKind, ParamLayout, Priors};
use crate::spatial::{apply_at_unchecked, trace_ainv_w};
use crate::transforms::{gamma_link_slope, link_inverse, rho_link_slope, yj_dlogdy_dgamma, Constrained, YjParam};

#[allow(clippy::too_many_arguments)]
fn model_blocks(
    kind: ModelKind,
    data: &Dataset,
    y: &DVector<f64>,
    layout: &ParamLayout,
    theta: &DVector<f64>,
    c: &Constrained,
    priors: &Priors,
    grad: &mut DVector<f64>,
) -> Result<()> {
    let w = &*data.weights;
    let n = data.n();
    let p = &c.params;
    let tau = c.tau.as_ref().map(|t| t.as_slice());
    let k = kernel_terms(kind, w, &data.x, y, p, tau)?;
    let inv_s2 = (-theta[layout.omega()]).exp();
    let m_r = DVector::from_vec(apply_at_unchecked(w, p.rho, &k.b));

    let beta_grad = data.x.tr_mul(&m_r) * inv_s2 - theta.rows_range(layout.beta()) / priors.var_beta;
    grad.rows_range_mut(layout.beta()).copy_from(&beta_grad);

    let omega = theta[layout.omega()];
    grad[layout.omega()] = -0.5 * n as f64 + 0.5 * inv_s2 * k.quad - omega / priors.var_omega;

    let w_r = w.mul_vec(k.r.as_slice());
    let data_term: f64 = k.b.iter().zip(&w_r).map(|(b, x)| b * x).sum();
    let d_rho = -trace_ainv_w(w, p.rho)? + inv_s2 * data_term;
    let rho_link = theta[layout.rho()];
    grad[layout.rho()] = d_rho * rho_link_slope(rho_link) - rho_link / priors.var_rho;

    if let Some(ig) = layout.gamma() {
        let t = YjParam::new(p.gamma.expect("yj kind carries gamma"))?;
        let mut d_gamma = 0.0;
        for i in 0..n {
            d_gamma += -inv_s2 * m_r[i] * t.dgamma(y[i]) + yj_dlogdy_dgamma(y[i]);
        }
        grad[ig] = d_gamma * gamma_link_slope(theta[ig]) - theta[ig] / priors.var_gamma;
    }

    if let (Some(inu), Some(range)) = (layout.nu(), layout.tau()) {
        let nu = p.nu.expect("t kind carries nu");
        let half = 0.5 * nu;
        let mut d_nu = 0.0;
        for (site, idx) in range.enumerate() {
            let lt = theta[idx];
            let e_neg = (-lt).exp();
            d_nu += 0.5 * half.ln() + 0.5 - 0.5 * digamma(half) - 0.5 * lt - 0.5 * e_neg;
            grad[idx] = -0.5 + 0.5 * inv_s2 * k.ar[site] * k.ar[site] * e_neg + half * (e_neg - 1.0);
        }
        grad[inu] = d_nu * theta[inu].exp() - theta[inu] / priors.var_nu;
    }
    Ok(())
}

fn check_finite(grad: &DVector<f64>, layout: &ParamLayout) -> Result<()> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(SarError::NonFiniteGradient {
            iteration: 0,
            coordinate: i,
            name: layout.coordinate_names()[i].clone(),
        });
    }
    Ok(())
}

/// Gradient of [`crate::likelihoods::log_h_full`] with respect to `theta`.
pub fn grad_log_h_full(
    kind: ModelKind,
    data: &Dataset,
    y_complete: &DVector<f64>,
    theta: &DVector<f64>,
    priors: &Priors,
) -> Result<DVector<f64>> {
    if y_complete.len() != data.n() {
        return Err(SarError::mismatch("responses", data.n(), y_complete.len()));
    }
    let layout = ParamLayout::for_full_data(kind, data);
    let c = link_inverse(&layout, theta)?;
    let mut grad = DVector::zeros(layout.len());
    model_blocks(kind, data, y_complete, &layout, theta, &c, priors, &mut grad)?;
    check_finite(&grad, &layout)?;
    Ok(grad)
}

/// Gradient of [`crate::likelihoods::log_h_missing`] with respect to `theta`
/// (which includes the missingness coefficients) at fixed imputations `y_u`.
pub fn grad_log_h_missing(
    kind: ModelKind,
    data: &Dataset,
    pattern: &MissingPattern,
    theta: &DVector<f64>,
    y_u: &[f64],
    priors: &Priors,
) -> Result<DVector<f64>> {
    let layout = ParamLayout::for_missing_data(kind, data);
    let c = link_inverse(&layout, theta)?;
    let y = pattern.complete(y_u)?;
    if y.len() != data.n() {
        return Err(SarError::mismatch("responses", data.n(), y.len()));
    }
    let mut grad = DVector::zeros(layout.len());
    model_blocks(kind, data, &y, &layout, theta, &c, priors, &mut grad)?;

    let psi = c.psi.as_ref().expect("missing-data layout carries psi");
    let eta = linear_predictors(&y, &data.xstar, psi);
    let resid = DVector::from_fn(data.n(), |i, _| (pattern.m[i] as u8 as f64) - logistic(eta[i]));
    let range = layout.psi_x().expect("missing-data layout");
    let iy = layout.psi_y().expect("missing-data layout");
    let gx = data.xstar.tr_mul(&resid) - theta.rows_range(range.clone()) / priors.var_psi;
    grad.rows_range_mut(range).copy_from(&gx);
    grad[iy] = resid.dot(&y) - theta[iy] / priors.var_psi;
    check_finite(&grad, &layout)?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihoods::{log_h_full, log_h_missing};
    use crate::model::{MissingnessParams, ModelParams};
    use crate::spatial::build_rook_lattice;
    use crate::transforms::link_forward;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;
    use statrs::function::gamma::ln_gamma;
    use std::sync::Arc;

    fn random_dataset(rng: &mut ChaCha20Rng, missing: usize) -> Dataset {
        let w = Arc::new(build_rook_lattice(4, 4, true).unwrap());
        let n = 16;
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let xs = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 });
        let mut y: Vec<Option<f64>> = (0..n).map(|_| Some(rng.sample::<f64, _>(StandardNormal) * 1.5)).collect();
        for i in rand::seq::index::sample(rng, n, missing) {
            y[i] = None;
        }
        Dataset::new(y, x, xs, w).unwrap()
    }

    fn random_theta(rng: &mut ChaCha20Rng, layout: &ParamLayout) -> DVector<f64> {
        let params = ModelParams {
            beta: DVector::from_fn(layout.n_beta, |_, _| rng.sample(StandardNormal)),
            sigma2: 0.3 + rng.random::<f64>(),
            rho: rng.random::<f64>() * 1.6 - 0.8,
            nu: layout.kind.is_student_t().then(|| 3.5 + rng.random::<f64>() * 10.0),
            gamma: layout.kind.is_yeo_johnson().then(|| 0.3 + rng.random::<f64>() * 1.4),
        };
        let tau = layout
            .kind
            .is_student_t()
            .then(|| DVector::from_fn(layout.n_sites, |_, _| 0.3 + rng.random::<f64>() * 2.0));
        let psi = layout.n_psi_x.map(|q| MissingnessParams {
            psi_x: DVector::from_fn(q, |_, _| rng.random::<f64>() - 0.5),
            psi_y: rng.random::<f64>() - 0.5,
        });
        link_forward(layout, &params, tau.as_ref(), psi.as_ref()).unwrap()
    }

    fn assert_fd_match(analytic: &DVector<f64>, f: impl Fn(&DVector<f64>) -> f64, theta: &DVector<f64>) {
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (f(&tp) - f(&tm)) / (2.0 * h);
            let err = (analytic[i] - fd).abs();
            assert!(
                err <= 1e-6 || err <= 1e-4 * fd.abs().max(analytic[i].abs()),
                "coordinate {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn full_data_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let priors = Priors::default();
        for kind in ModelKind::ALL {
            for _ in 0..3 {
                let data = random_dataset(&mut rng, 0);
                let y = data.complete_y().unwrap();
                let layout = ParamLayout::for_full_data(kind, &data);
                let theta = random_theta(&mut rng, &layout);
                let g = grad_log_h_full(kind, &data, &y, &theta, &priors).unwrap();
                assert_fd_match(&g, |t| log_h_full(kind, &data, &y, t, &priors).unwrap(), &theta);
            }
        }
    }

    #[test]
    fn missing_data_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let priors = Priors::default();
        for kind in ModelKind::ALL {
            for _ in 0..3 {
                let data = random_dataset(&mut rng, 8);
                let pattern = data.missing_pattern();
                let y_u: Vec<f64> = (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let layout = ParamLayout::for_missing_data(kind, &data);
                let theta = random_theta(&mut rng, &layout);
                let g = grad_log_h_missing(kind, &data, &pattern, &theta, &y_u, &priors).unwrap();
                assert_fd_match(
                    &g,
                    |t| log_h_missing(kind, &data, &pattern, t, &y_u, &priors).unwrap(),
                    &theta,
                );
            }
        }
    }

    #[test]
    fn beta_gradient_at_least_squares_is_prior_pull() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let data = random_dataset(&mut rng, 0);
        let y = data.complete_y().unwrap();
        let xtx = data.x.tr_mul(&data.x);
        let beta = xtx.cholesky().unwrap().solve(&data.x.tr_mul(&y));
        let layout = ParamLayout::for_full_data(ModelKind::SEM_GAU, &data);
        let params = ModelParams {
            beta: beta.clone(),
            sigma2: 0.8,
            rho: 0.0,
            nu: None,
            gamma: None,
        };
        let theta = link_forward(&layout, &params, None, None).unwrap();
        let g = grad_log_h_full(ModelKind::SEM_GAU, &data, &y, &theta, &Priors::default()).unwrap();
        for j in 0..3 {
            assert!((g[j] + beta[j] / 100.0).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_transform_limit_shares_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let data = random_dataset(&mut rng, 0);
        let y = data.complete_y().unwrap();
        let lg = ParamLayout::for_full_data(ModelKind::SEM_GAU, &data);
        let ly = ParamLayout::for_full_data(ModelKind::YJ_SEM_GAU, &data);
        let theta_g = random_theta(&mut rng, &lg);
        let mut theta_y = DVector::zeros(ly.len());
        theta_y.rows_range_mut(0..lg.len()).copy_from(&theta_g);
        theta_y[ly.gamma().unwrap()] = 0.0;
        let gg = grad_log_h_full(ModelKind::SEM_GAU, &data, &y, &theta_g, &Priors::default()).unwrap();
        let gy = grad_log_h_full(ModelKind::YJ_SEM_GAU, &data, &y, &theta_y, &Priors::default()).unwrap();
        for i in 0..lg.len() {
            assert!((gg[i] - gy[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn psi_gradient_at_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let data = random_dataset(&mut rng, 5);
        let pattern = data.missing_pattern();
        let y_u = vec![0.5; 5];
        let kind = ModelKind::SEM_GAU;
        let layout = ParamLayout::for_missing_data(kind, &data);
        let mut theta = random_theta(&mut rng, &layout);
        for i in layout.psi_x().unwrap() {
            theta[i] = 0.0;
        }
        theta[layout.psi_y().unwrap()] = 0.0;
        let g = grad_log_h_missing(kind, &data, &pattern, &theta, &y_u, &Priors::default()).unwrap();
        let y = pattern.complete(&y_u).unwrap();
        let mut expected_y = 0.0;
        let mut expected_x = DVector::zeros(2);
        for i in 0..data.n() {
            let r = pattern.m[i] as u8 as f64 - 0.5;
            expected_y += r * y[i];
            expected_x += data.xstar.row(i).transpose() * r;
        }
        let range = layout.psi_x().unwrap();
        assert!((g.rows_range(range).into_owned() - expected_x).amax() < 1e-12);
        assert!((g[layout.psi_y().unwrap()] - expected_y).abs() < 1e-12);
    }

    #[test]
    fn psi_y_direction_on_two_sites() {
        // Site 0 is missing with a large response, site 1 observed with a small one:
        // raising psi_y makes this pattern more likely.
        let w = Arc::new(build_rook_lattice(1, 2, true).unwrap());
        let data = Dataset::new(
            vec![None, Some(-1.0)],
            DMatrix::from_element(2, 1, 1.0),
            DMatrix::from_element(2, 1, 1.0),
            w,
        )
        .unwrap();
        let pattern = data.missing_pattern();
        let layout = ParamLayout::for_missing_data(ModelKind::SEM_GAU, &data);
        let theta = DVector::zeros(layout.len());
        let g = grad_log_h_missing(ModelKind::SEM_GAU, &data, &pattern, &theta, &[2.0], &Priors::default()).unwrap();
        assert!((g[layout.psi_y().unwrap()] - (0.5 * 2.0 + (-0.5) * -1.0)).abs() < 1e-12);
        assert!(g[layout.psi_y().unwrap()] > 0.0);
    }

    #[test]
    fn digamma_matches_log_gamma_differences() {
        // Fourth-order stencil keeps truncation and rounding below 1e-10.
        let h = 1e-3;
        for &x in &[0.6, 1.0, 2.0, 2.5, 3.7, 10.0, 55.5, 1000.0] {
            let d1 = ln_gamma(x + h) - ln_gamma(x - h);
            let d2 = ln_gamma(x + 2.0 * h) - ln_gamma(x - 2.0 * h);
            let fd = (8.0 * d1 - d2) / (12.0 * h);
            assert!((digamma(x) - fd).abs() < 1e-10, "x = {x}");
        }
    }
}
