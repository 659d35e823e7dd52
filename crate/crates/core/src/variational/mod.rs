//! Stochastic-gradient variational Bayes with a Gaussian factor family.

mod adadelta;
mod family;
mod fit;
mod init;

pub use adadelta::{adadelta_step, AdadeltaConfig, AdadeltaState};
pub use family::{grad_log_q0, reparam_grads, sample_q, vech_len, QDraw, ReparamGrads, VariationalParams};
pub use fit::{
    constrained_row, draw_posterior, init_lambda, trace_names, vb_fit, FitConfig, FitResult, Trace, TraceRow,
};
pub use init::{lambda_from_ml, profile_ml, rho_grid, InitSettings, MlEstimate, RHO_GRID_POINTS};

pub(crate) use fit::{run_sga, SgaTarget};
