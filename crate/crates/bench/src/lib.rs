//! Fixtures shared by the benchmarks: a simulated YJ-SEM-t dataset on a
//! square rook lattice, with and without missing responses.

use std::sync::Arc;

use sarvb::simulate::{beta_preset, make_design, make_lognormal_design, simulate_sem};
use sarvb::transforms::{link_forward, link_inverse, Constrained};
use sarvb::variational::draw_posterior;
use sarvb::{
    build_rook_lattice, rng_from_seed, Dataset, FitConfig, MissingPattern, MissingnessParams, ModelKind, ModelParams,
    ParamLayout, SarRng, SpatialWeights,
};

pub const KIND: ModelKind = ModelKind::YJ_SEM_T;

pub struct Fixture {
    pub complete: Dataset,
    pub y: nalgebra::DVector<f64>,
    /// Same design with every fourth response removed.
    pub missing: Dataset,
    pub pattern: MissingPattern,
    pub theta_full: nalgebra::DVector<f64>,
    pub theta_missing: nalgebra::DVector<f64>,
    pub state: Constrained,
    pub rng: SarRng,
}

impl Fixture {
    pub fn weights(&self) -> &SpatialWeights {
        &self.complete.weights
    }
}

pub fn fixture(side: usize) -> Fixture {
    let mut rng = rng_from_seed(11);
    let w = build_rook_lattice(side, side, true).expect("lattice");
    let n = w.n();
    let x = make_design(n, 3, &mut rng);
    let xstar = make_lognormal_design(n, 1, &mut rng);
    let truth = ModelParams { beta: beta_preset(4, &mut rng), sigma2: 1.0, rho: 0.8, nu: Some(5.0), gamma: Some(1.2) };
    let sim = simulate_sem(KIND, &x, &w, &truth, &mut rng).expect("simulation");
    let w = Arc::new(w);
    let complete = Dataset::new(sim.y.iter().map(|&v| Some(v)).collect(), x.clone(), xstar.clone(), w.clone())
        .expect("complete data");
    let responses: Vec<Option<f64>> = sim.y.iter().enumerate().map(|(i, &v)| (i % 4 != 0).then_some(v)).collect();
    let missing = Dataset::new(responses, x, xstar, w).expect("missing data");
    let pattern = missing.missing_pattern();

    let tau = nalgebra::DVector::from_element(n, 1.0);
    let mut psi = MissingnessParams::zeros(missing.n_psi_x());
    psi.psi_x[0] = -1.0;
    psi.psi_y = -0.1;
    let full_layout = ParamLayout::for_full_data(KIND, &complete);
    let theta_full = link_forward(&full_layout, &truth, Some(&tau), None).expect("full theta");
    let missing_layout = ParamLayout::for_missing_data(KIND, &missing);
    let theta_missing = link_forward(&missing_layout, &truth, Some(&tau), Some(&psi)).expect("missing theta");
    let state = link_inverse(&missing_layout, &theta_missing).expect("state");
    Fixture { y: sim.y, complete, missing, pattern, theta_full, theta_missing, state, rng }
}

/// A variational family of the size used in practice, centred at the
/// fixture's parameters.
pub fn variational(fx: &Fixture, n_factors: usize) -> sarvb::VariationalParams {
    sarvb::VariationalParams::with_constant_spread(fx.theta_full.clone(), n_factors, FitConfig::default().init_spread)
        .expect("variational family")
}

/// Draws `n` parameter vectors from the fixture's variational family and
/// returns how many were produced.
pub fn posterior_draws(fx: &mut Fixture, n_factors: usize, n: usize) -> usize {
    let lambda = variational(fx, n_factors);
    let layout = ParamLayout::for_full_data(KIND, &fx.complete);
    draw_posterior(&layout, &lambda, n, &mut fx.rng).expect("draws").len()
}
