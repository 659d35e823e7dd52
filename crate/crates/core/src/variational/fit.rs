//! The stochastic-gradient ascent loop and the complete-data fit.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Result, SarError};
use crate::gradients::grad_log_h_full;
use crate::hvb::AcceptanceRecord;
use crate::likelihoods::log_h_full;
use crate::model::{Dataset, MissingnessParams, ModelKind, ModelParams, ParamLayout, Priors};
use crate::transforms::{link_inverse, Constrained};

use super::adadelta::{AdadeltaConfig, AdadeltaState};
use super::family::{reparam_grads, sample_q, VariationalParams};
use super::init::{lambda_from_ml, profile_ml, InitSettings};

/// Optimizer and initialisation settings shared by both fitting routines.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub n_factors: usize,
    pub max_iters: usize,
    /// Recorded in the result; the caller seeds the generator it passes in.
    pub seed: u64,
    pub trace_every: usize,
    /// Plateau rule window; `None` runs all `max_iters` iterations.
    pub stop_window: Option<usize>,
    pub stop_tol: f64,
    pub gamma_init: f64,
    pub nu_init: f64,
    pub psi_init: f64,
    pub init_spread: f64,
    pub adadelta: AdadeltaConfig,
    /// Record a single-draw estimate of `log h - log q` at every iteration.
    pub track_elbo: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_factors: 4,
            max_iters: 10_000,
            seed: 0,
            trace_every: 100,
            stop_window: None,
            stop_tol: 1e-4,
            gamma_init: 1.0 + 1e-3,
            nu_init: 4.0,
            psi_init: 0.1,
            init_spread: 0.01,
            adadelta: AdadeltaConfig::default(),
            track_elbo: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_factors == 0 {
            return Err(SarError::Argument("n_factors must be at least 1".into()));
        }
        if self.trace_every == 0 {
            return Err(SarError::Argument("trace_every must be at least 1".into()));
        }
        if self.stop_window == Some(0) {
            return Err(SarError::Argument("stop_window must be at least 1".into()));
        }
        if !(self.stop_tol > 0.0) {
            return Err(SarError::Argument("stop_tol must be positive".into()));
        }
        if !(self.gamma_init > 0.0 && self.gamma_init < 2.0) {
            return Err(SarError::Argument("gamma_init must lie in (0, 2)".into()));
        }
        if !(self.nu_init > 3.0) || !self.nu_init.is_finite() {
            return Err(SarError::Argument("nu_init must exceed 3".into()));
        }
        if !self.psi_init.is_finite() || !(self.init_spread > 0.0) {
            return Err(SarError::Argument("psi_init must be finite and init_spread positive".into()));
        }
        let AdadeltaConfig { alpha, upsilon } = self.adadelta;
        if !(alpha > 0.0) || !(upsilon > 0.0 && upsilon < 1.0) {
            return Err(SarError::Argument("ADADELTA needs alpha > 0 and upsilon in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn init_settings(&self) -> InitSettings {
        InitSettings {
            n_factors: self.n_factors,
            spread: self.init_spread,
            gamma_init: self.gamma_init,
            nu_init: self.nu_init,
            psi_init: self.psi_init,
        }
    }
}

/// One recorded row of constrained variational means.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Number of completed updates when the row was taken.
    pub iter: usize,
    pub values: Vec<f64>,
}

/// Trajectory of the variational means mapped to the constrained scale
/// (latent scales excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub names: Vec<String>,
    pub rows: Vec<TraceRow>,
}

/// Names of the traced scalar parameters for `layout`.
pub fn trace_names(layout: &ParamLayout) -> Vec<String> {
    let mut names = ModelParams::names(layout.kind, layout.n_beta);
    if let Some(q) = layout.n_psi_x {
        names.extend(MissingnessParams::names(q));
    }
    names
}

/// Constrained scalar parameters (no latent scales) as one flat row.
pub fn constrained_row(c: &Constrained) -> Vec<f64> {
    let mut row = c.params.to_vec();
    if let Some(psi) = &c.psi {
        row.extend(psi.to_vec());
    }
    row
}

/// Output of a variational fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub kind: ModelKind,
    pub layout: ParamLayout,
    pub lambda: VariationalParams,
    pub trace: Trace,
    pub iterations: usize,
    pub stopped_early: bool,
    pub wall_time: Duration,
    pub seed: u64,
    /// Per-iteration, per-block sampler counts (missing-data fits only).
    pub acceptance: Vec<AcceptanceRecord>,
    /// Single-draw ELBO estimates when `track_elbo` is set.
    pub elbo: Vec<f64>,
}

impl FitResult {
    /// The variational mean on the constrained scale.
    pub fn mean_constrained(&self) -> Result<Constrained> {
        link_inverse(&self.layout, &self.lambda.mu)
    }
}

/// The target density seen by the ascent loop.
pub(crate) trait SgaTarget {
    fn grad_log_h<R: Rng + ?Sized>(&mut self, iter: usize, theta: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>>;
    fn log_h(&self, theta: &DVector<f64>) -> Result<f64>;
}

pub(crate) struct SgaOutcome {
    pub lambda: VariationalParams,
    pub trace: Trace,
    pub iterations: usize,
    pub stopped_early: bool,
    pub elbo: Vec<f64>,
}

fn at_iteration(err: SarError, iteration: usize) -> SarError {
    match err {
        SarError::NonFiniteGradient { coordinate, name, .. } => SarError::NonFiniteGradient {
            iteration,
            coordinate,
            name,
        },
        other => other,
    }
}

fn lambda_coordinate_name(layout: &ParamLayout, lambda: &VariationalParams, k: usize) -> String {
    let names = layout.coordinate_names();
    let s = lambda.dim();
    if k < s {
        return format!("mu[{}]", names[k]);
    }
    let mut rest = k - s;
    for j in 0..lambda.n_factors() {
        let len = s - j;
        if rest < len {
            return format!("B[{},{j}]", names[j + rest]);
        }
        rest -= len;
    }
    format!("d[{}]", names[rest])
}

pub(crate) fn run_sga<R: Rng + ?Sized, T: SgaTarget>(
    layout: &ParamLayout,
    mut lambda: VariationalParams,
    config: &FitConfig,
    rng: &mut R,
    target: &mut T,
) -> Result<SgaOutcome> {
    let mut state = AdadeltaState::new(lambda.flat_len(), config.adadelta);
    let mut trace = Trace {
        names: trace_names(layout),
        rows: Vec::with_capacity(config.max_iters.div_ceil(config.trace_every)),
    };
    let mut elbo = Vec::new();
    let mut window_start = lambda.mu.clone();
    let mut iterations = 0;
    let mut stopped_early = false;

    for t in 0..config.max_iters {
        if t % config.trace_every == 0 {
            trace.rows.push(TraceRow {
                iter: t,
                values: constrained_row(&link_inverse(layout, &lambda.mu)?),
            });
        }
        let draw = sample_q(&lambda, rng);
        let g = target
            .grad_log_h(t, &draw.theta, rng)
            .map_err(|e| at_iteration(e, t))?;
        if config.track_elbo {
            elbo.push(target.log_h(&draw.theta)? - lambda.log_density(&draw.theta)?);
        }
        let grads = reparam_grads(&lambda, &draw.eta, &draw.eps, &g)?.to_flat();
        if let Some(k) = grads.iter().position(|v| !v.is_finite()) {
            return Err(SarError::NonFiniteGradient {
                iteration: t,
                coordinate: k,
                name: lambda_coordinate_name(layout, &lambda, k),
            });
        }
        let step = state.step(&grads)?;
        lambda.apply_step(&step)?;
        iterations = t + 1;

        if let Some(window) = config.stop_window {
            if iterations % window == 0 {
                if (&lambda.mu - &window_start).amax() < config.stop_tol {
                    stopped_early = true;
                    break;
                }
                window_start.copy_from(&lambda.mu);
            }
        }
    }
    Ok(SgaOutcome {
        lambda,
        trace,
        iterations,
        stopped_early,
        elbo,
    })
}

struct FullTarget<'a> {
    kind: ModelKind,
    data: &'a Dataset,
    y: DVector<f64>,
    priors: &'a Priors,
}

impl SgaTarget for FullTarget<'_> {
    fn grad_log_h<R: Rng + ?Sized>(&mut self, _iter: usize, theta: &DVector<f64>, _rng: &mut R) -> Result<DVector<f64>> {
        grad_log_h_full(self.kind, self.data, &self.y, theta, self.priors)
    }

    fn log_h(&self, theta: &DVector<f64>) -> Result<f64> {
        log_h_full(self.kind, self.data, &self.y, theta, self.priors)
    }
}

/// Starting variational distribution for a complete-data fit.
pub fn init_lambda<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &Dataset,
    config: &FitConfig,
    rng: &mut R,
) -> Result<VariationalParams> {
    let y = data.complete_y()?;
    let ml = profile_ml(&y, &data.x, &data.weights)?;
    lambda_from_ml(&ParamLayout::for_full_data(kind, data), &ml, &config.init_settings(), rng)
}

/// Variational Bayes on complete data.
pub fn vb_fit<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &Dataset,
    priors: &Priors,
    config: &FitConfig,
    rng: &mut R,
) -> Result<FitResult> {
    config.validate()?;
    priors.validate()?;
    let start = Instant::now();
    let y = data.complete_y()?;
    let layout = ParamLayout::for_full_data(kind, data);
    let lambda = init_lambda(kind, data, config, rng)?;
    let mut target = FullTarget { kind, data, y, priors };
    let out = run_sga(&layout, lambda, config, rng, &mut target)?;
    Ok(FitResult {
        kind,
        layout,
        lambda: out.lambda,
        trace: out.trace,
        iterations: out.iterations,
        stopped_early: out.stopped_early,
        wall_time: start.elapsed(),
        seed: config.seed,
        acceptance: Vec::new(),
        elbo: out.elbo,
    })
}

/// `n_draws` draws from `q_lambda`, mapped to the constrained scale.
pub fn draw_posterior<R: Rng + ?Sized>(
    layout: &ParamLayout,
    lambda: &VariationalParams,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<Constrained>> {
    if lambda.dim() != layout.len() {
        return Err(SarError::mismatch("variational dimension", layout.len(), lambda.dim()));
    }
    (0..n_draws)
        .map(|_| link_inverse(layout, &sample_q(lambda, rng).theta))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{make_design, simulate_sem};
    use crate::spatial::build_rook_lattice;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::Arc;

    fn small_data(kind: ModelKind, seed: u64) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let w = build_rook_lattice(5, 5, true).unwrap();
        let x = make_design(25, 1, &mut rng);
        let params = ModelParams {
            beta: DVector::from_vec(vec![1.0, 2.0]),
            sigma2: 1.0,
            rho: 0.5,
            nu: kind.is_student_t().then_some(5.0),
            gamma: kind.is_yeo_johnson().then_some(1.2),
        };
        let y = simulate_sem(kind, &x, &w, &params, &mut rng).unwrap().y;
        Dataset::complete(y, x, Arc::new(w)).unwrap()
    }

    #[test]
    fn zero_iterations_return_initialisation() {
        let data = small_data(ModelKind::SEM_GAU, 1);
        let config = FitConfig {
            max_iters: 0,
            ..FitConfig::default()
        };
        let fit = vb_fit(ModelKind::SEM_GAU, &data, &Priors::default(), &config, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        let init = init_lambda(ModelKind::SEM_GAU, &data, &config, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        assert_eq!(fit.lambda, init);
        assert_eq!(fit.iterations, 0);
        assert!(fit.trace.rows.is_empty());
    }

    #[test]
    fn same_seed_same_trace() {
        for kind in ModelKind::ALL {
            let data = small_data(kind, 3);
            let config = FitConfig {
                max_iters: 300,
                trace_every: 7,
                ..FitConfig::default()
            };
            let run = |s| vb_fit(kind, &data, &Priors::default(), &config, &mut ChaCha20Rng::seed_from_u64(s)).unwrap();
            let (a, b) = (run(4), run(4));
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.lambda, b.lambda);
            assert_eq!(a.trace.rows.len(), 300usize.div_ceil(7));
            assert_eq!(a.trace.names.len(), a.trace.rows[0].values.len());
            assert_ne!(run(5).lambda, a.lambda);
        }
    }

    #[test]
    fn loading_upper_triangle_stays_zero() {
        let data = small_data(ModelKind::YJ_SEM_T, 5);
        let config = FitConfig {
            max_iters: 200,
            ..FitConfig::default()
        };
        let fit = vb_fit(ModelKind::YJ_SEM_T, &data, &Priors::default(), &config, &mut ChaCha20Rng::seed_from_u64(6)).unwrap();
        for j in 0..fit.lambda.n_factors() {
            for i in 0..j {
                assert_eq!(fit.lambda.b[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn plateau_rule_stops_early() {
        let data = small_data(ModelKind::SEM_GAU, 7);
        let config = FitConfig {
            max_iters: 5000,
            stop_window: Some(50),
            stop_tol: 10.0,
            ..FitConfig::default()
        };
        let fit = vb_fit(ModelKind::SEM_GAU, &data, &Priors::default(), &config, &mut ChaCha20Rng::seed_from_u64(8)).unwrap();
        assert!(fit.stopped_early);
        assert_eq!(fit.iterations, 50);
        assert_eq!(fit.trace.rows.len(), 1);
    }

    #[test]
    fn missing_responses_are_rejected() {
        let mut data = small_data(ModelKind::SEM_GAU, 9);
        data.y[3] = None;
        let err = vb_fit(ModelKind::SEM_GAU, &data, &Priors::default(), &FitConfig::default(), &mut ChaCha20Rng::seed_from_u64(1));
        assert!(matches!(err, Err(SarError::Argument(_))));
    }

    #[test]
    fn coordinate_names_cover_the_flat_vector() {
        let layout = ParamLayout::full(ModelKind::SEM_GAU, 1, 3);
        let lambda = VariationalParams::with_constant_spread(DVector::zeros(3), 2, 0.1).unwrap();
        let names: Vec<String> = (0..lambda.flat_len()).map(|k| lambda_coordinate_name(&layout, &lambda, k)).collect();
        assert_eq!(
            names,
            vec![
                "mu[beta0]", "mu[log_sigma2]", "mu[rho_link]", "B[beta0,0]", "B[log_sigma2,0]", "B[rho_link,0]",
                "B[log_sigma2,1]", "B[rho_link,1]", "d[beta0]", "d[log_sigma2]", "d[rho_link]"
            ]
        );
    }

    #[test]
    fn posterior_draws_respect_the_domain() {
        let layout = ParamLayout::full(ModelKind::YJ_SEM_T, 2, 3);
        let mu = DVector::from_vec(vec![1.0, -1.0, 0.0, 2.0, 0.5, 0.1, -0.3, 0.2, 0.0]);
        let lambda = VariationalParams::new(
            mu.clone(),
            DMatrix::from_element(9, 2, 0.4),
            DVector::from_element(9, 0.5),
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        assert!(draw_posterior(&layout, &lambda, 0, &mut rng).unwrap().is_empty());
        let draws = draw_posterior(&layout, &lambda, 40_000, &mut rng).unwrap();
        let mut beta0 = 0.0;
        for c in &draws {
            assert!(c.params.sigma2 > 0.0);
            assert!(c.params.rho.abs() < 1.0);
            assert!(c.params.nu.unwrap() > 3.0);
            let g = c.params.gamma.unwrap();
            assert!(g > 0.0 && g < 2.0);
            assert!(c.tau.as_ref().unwrap().iter().all(|&t| t > 0.0));
            beta0 += c.params.beta[0];
        }
        beta0 /= draws.len() as f64;
        let sd = lambda.marginal_sd()[0];
        assert!((beta0 - 1.0).abs() < 3.0 * sd / (draws.len() as f64).sqrt());
    }
}
