//! Estimation of spatial error models with Gaussian or Student-t errors and
//! an optional Yeo-Johnson response transform.
//!
//! The model is `t(y) = X beta + u`, `(I - rho W) u = e`, with `e` Gaussian
//! (optionally scale-mixed into Student-t). Parameters are estimated by
//! stochastic-gradient variational Bayes with a factor-covariance Gaussian
//! family; when responses are missing not at random, a hybrid scheme
//! alternates variational updates with Metropolis-Hastings draws of the
//! missing responses.

// Range checks are written as `!(x > lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gradients;
pub mod hvb;
pub mod io;
pub mod likelihoods;
pub mod missingness;
pub mod model;
pub mod model_select;
pub mod simulate;
pub mod spatial;
pub mod transforms;
pub mod variational;

pub use error::{Result, SarError};

pub use model::{
    Dataset, ErrorFamily, MissingPattern, MissingnessParams, ModelKind, ModelParams, ParamLayout, Priors,
    Transform,
};
pub use spatial::{build_rook_lattice, Partition, SpatialWeights};
pub use hvb::{hvb_fit, HvbConfig, KernelChoice};
pub use variational::{vb_fit, FitConfig, FitResult, VariationalParams};

/// Seeded random-number generator used throughout the crate.
pub type SarRng = rand_chacha::ChaCha20Rng;

/// Builds the crate's RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SarRng {
    use rand::SeedableRng;
    SarRng::seed_from_u64(seed)
}
