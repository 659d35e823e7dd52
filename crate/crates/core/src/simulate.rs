//! Synthetic datasets drawn from each model kind.

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};

use crate::error::{Result, SarError};
use crate::model::{ModelKind, ModelParams};
use crate::spatial::{solve_a, SpatialWeights};
use crate::transforms::YjParam;

/// Regression coefficient values used by [`beta_preset`].
pub const BETA_PRESET_VALUES: [f64; 6] = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];

/// `n x (r + 1)` design: an intercept column followed by `r` standard-normal columns.
pub fn make_design<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::from_element(n, r + 1, 1.0);
    for j in 1..=r {
        for i in 0..n {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    x
}

/// `n x (q + 1)` missingness design: an intercept followed by `q` log-normal
/// (log-scale mean 0, sd 1) covariates.
pub fn make_lognormal_design<R: Rng + ?Sized>(n: usize, q: usize, rng: &mut R) -> DMatrix<f64> {
    let dist = LogNormal::new(0.0, 1.0).expect("valid log-normal parameters");
    let mut x = DMatrix::from_element(n, q + 1, 1.0);
    for j in 1..=q {
        for i in 0..n {
            x[(i, j)] = dist.sample(rng);
        }
    }
    x
}

/// Coefficients drawn uniformly from `{-3, -2, -1, 1, 2, 3}`.
pub fn beta_preset<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| *BETA_PRESET_VALUES.choose(rng).expect("non-empty preset"))
}

/// Reciprocal of a `Gamma(shape, rate)` draw.
pub fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| SarError::Domain(format!("inverse gamma({shape}, {rate}): {e}")))?;
    Ok(1.0 / gamma.sample(rng))
}

/// A simulated response vector and, for t-error kinds, the latent scales used.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedResponse {
    pub y: DVector<f64>,
    pub tau: Option<DVector<f64>>,
}

/// Draws `y` from the model: `u = (I - rho W)^-1 e`, `y = t_gamma^-1(X beta + u)`.
pub fn simulate_sem<R: Rng + ?Sized>(
    kind: ModelKind,
    x: &DMatrix<f64>,
    w: &SpatialWeights,
    params: &ModelParams,
    rng: &mut R,
) -> Result<SimulatedResponse> {
    params.validate(kind)?;
    let n = x.nrows();
    if w.n() != n {
        return Err(SarError::mismatch("weight matrix size", n, w.n()));
    }
    if x.ncols() != params.beta.len() {
        return Err(SarError::mismatch("beta", x.ncols(), params.beta.len()));
    }
    let tau = match params.nu {
        Some(nu) if kind.is_student_t() => Some(
            (0..n)
                .map(|_| draw_inverse_gamma(nu / 2.0, nu / 2.0, rng))
                .collect::<Result<Vec<_>>>()
                .map(DVector::from_vec)?,
        ),
        _ => None,
    };
    let e: Vec<f64> = (0..n)
        .map(|i| {
            let scale = params.sigma2 * tau.as_ref().map_or(1.0, |t| t[i]);
            scale.sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let u = solve_a(w, params.rho, &e)?;
    let mut y = x * &params.beta + DVector::from_vec(u);
    if let Some(g) = params.gamma.filter(|_| kind.is_yeo_johnson()) {
        let yj = YjParam::new(g)?;
        for v in y.iter_mut() {
            *v = yj.inverse(*v)?;
        }
    }
    Ok(SimulatedResponse { y, tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::build_rook_lattice;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn gaussian(beta: Vec<f64>, sigma2: f64, rho: f64) -> ModelParams {
        ModelParams {
            beta: DVector::from_vec(beta),
            sigma2,
            rho,
            nu: None,
            gamma: None,
        }
    }

    #[test]
    fn design_shapes_and_moments() {
        let x0 = make_design(5, 0, &mut rng(1));
        assert_eq!(x0.shape(), (5, 1));
        assert!(x0.iter().all(|&v| v == 1.0));

        let n = 10_000;
        let x = make_design(n, 2, &mut rng(2));
        assert!(x.column(0).iter().all(|&v| v == 1.0));
        for j in 1..3 {
            let col = x.column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt());
            assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
        }
        assert_eq!(make_design(4, 3, &mut rng(9)), make_design(4, 3, &mut rng(9)));
    }

    #[test]
    fn lognormal_design_is_positive() {
        let x = make_lognormal_design(200, 1, &mut rng(3));
        assert!(x.column(1).iter().all(|&v| v > 0.0));
    }

    #[test]
    fn preset_values_exclude_zero() {
        let b = beta_preset(1000, &mut rng(4));
        assert!(b.iter().all(|v| BETA_PRESET_VALUES.contains(v)));
        for v in BETA_PRESET_VALUES {
            assert!(b.iter().any(|&x| x == v));
        }
    }

    #[test]
    fn inverse_gamma_moments() {
        let mut r = rng(5);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| draw_inverse_gamma(3.0, 4.0, &mut r).unwrap()).collect();
        assert!(draws.iter().all(|&v| v > 0.0));
        // IG(3, 4): mean 2, variance 4.
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 3.0 * (4.0 / n as f64).sqrt());
        assert_eq!(
            draw_inverse_gamma(2.0, 2.0, &mut rng(6)).unwrap(),
            draw_inverse_gamma(2.0, 2.0, &mut rng(6)).unwrap()
        );
        assert!(draw_inverse_gamma(-1.0, 2.0, &mut rng(6)).is_err());
    }

    #[test]
    fn inverse_gamma_two_two_mean() {
        // IG(2, 2) has infinite variance, so compare medians instead of
        // relying on a CLT band: median = 2 / median(Gamma(2, 1)) = 2 / 1.678347.
        let mut r = rng(7);
        let mut draws: Vec<f64> = (0..100_001).map(|_| draw_inverse_gamma(2.0, 2.0, &mut r).unwrap()).collect();
        draws.sort_by(f64::total_cmp);
        let median = draws[50_000];
        assert!((median - 2.0 / 1.678_346_99).abs() < 0.02, "median {median}");
    }

    #[test]
    fn independent_gaussian_when_rho_zero() {
        let n = 10_000;
        let w = build_rook_lattice(100, 100, true).unwrap();
        let x = DMatrix::from_element(n, 1, 1.0);
        let sim = simulate_sem(ModelKind::SEM_GAU, &x, &w, &gaussian(vec![2.0], 1.5, 0.0), &mut rng(8)).unwrap();
        assert!(sim.tau.is_none());
        let mean = sim.y.mean();
        let var = sim.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 2.0).abs() < 3.0 * (1.5 / n as f64).sqrt());
        assert!((var - 1.5).abs() < 3.0 * 1.5 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn two_site_covariance() {
        let w = SpatialWeights::from_entries(2, [(0, 1, 1.0), (1, 0, 1.0)], true).unwrap();
        let x = DMatrix::from_element(2, 1, 1.0);
        let params = gaussian(vec![0.0], 1.0, 0.5);
        // A = [[1, -0.5], [-0.5, 1]], A^T A = [[1.25, -1], [-1, 1.25]].
        let ata = DMatrix::<f64>::from_row_slice(2, 2, &[1.25, -1.0, -1.0, 1.25]);
        let cov = ata.try_inverse().unwrap();
        let mut r = rng(10);
        let reps = 10_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..reps {
            let y = simulate_sem(ModelKind::SEM_GAU, &x, &w, &params, &mut r).unwrap().y;
            acc += &y * y.transpose();
        }
        acc /= reps as f64;
        for i in 0..2 {
            for j in 0..2 {
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / reps as f64).sqrt();
                assert!((acc[(i, j)] - cov[(i, j)]).abs() < 3.0 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn yeo_johnson_at_one_matches_identity_kind() {
        let w = build_rook_lattice(4, 4, true).unwrap();
        let x = make_design(16, 2, &mut rng(11));
        let base = gaussian(vec![1.0, -2.0, 3.0], 0.7, 0.4);
        let plain = simulate_sem(ModelKind::SEM_GAU, &x, &w, &base, &mut rng(12)).unwrap();
        let yj = ModelParams {
            gamma: Some(1.0),
            ..base
        };
        let transformed = simulate_sem(ModelKind::YJ_SEM_GAU, &x, &w, &yj, &mut rng(12)).unwrap();
        assert_eq!(plain.y, transformed.y);
    }

    #[test]
    fn huge_nu_looks_gaussian() {
        let w = SpatialWeights::from_entries(2, [(0, 1, 1.0), (1, 0, 1.0)], true).unwrap();
        let x = DMatrix::from_element(2, 1, 1.0);
        let params = ModelParams {
            nu: Some(1e6),
            ..gaussian(vec![0.0], 1.0, 0.3)
        };
        let a = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 1.0]);
        let cov = (a.transpose() * &a).try_inverse().unwrap();
        let mut r = rng(13);
        let reps = 10_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..reps {
            let sim = simulate_sem(ModelKind::SEM_T, &x, &w, &params, &mut r).unwrap();
            assert!(sim.tau.as_ref().unwrap().iter().all(|&t| (t - 1.0).abs() < 0.02));
            acc += &sim.y * sim.y.transpose();
        }
        acc /= reps as f64;
        for i in 0..2 {
            for j in 0..2 {
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / reps as f64).sqrt();
                assert!((acc[(i, j)] - cov[(i, j)]).abs() < 3.0 * se);
            }
        }
    }

    #[test]
    fn gamma_above_one_gives_left_skew() {
        let mut r = rng(14);
        let w = build_rook_lattice(25, 25, true).unwrap();
        let x = make_design(625, 5, &mut r);
        let params = ModelParams {
            beta: beta_preset(6, &mut r),
            sigma2: 1.0,
            rho: 0.8,
            nu: None,
            gamma: Some(1.25),
        };
        let y = simulate_sem(ModelKind::YJ_SEM_GAU, &x, &w, &params, &mut r).unwrap().y;
        let n = y.len() as f64;
        let mean = y.mean();
        let m2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = y.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        assert!(m3 / m2.powf(1.5) < 0.0);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let w = build_rook_lattice(2, 2, true).unwrap();
        let x = make_design(4, 1, &mut rng(15));
        let err = simulate_sem(ModelKind::SEM_GAU, &x, &w, &gaussian(vec![1.0], 1.0, 0.1), &mut rng(1));
        assert!(matches!(err, Err(SarError::DimensionMismatch { .. })));
        let bad_rho = gaussian(vec![1.0, 1.0], 1.0, 1.0);
        assert!(simulate_sem(ModelKind::SEM_GAU, &x, &w, &bad_rho, &mut rng(1)).is_err());
    }
}
