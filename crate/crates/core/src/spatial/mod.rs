//! Spatial weights, the SAR operator and its determinant and conditional
//! Gaussian machinery.

mod band;
mod conditional;
mod logdet;
mod weights;

pub use band::{BandLu, BandOrdering};
pub use conditional::{conditional_gaussian, ConditionalGaussian, PrecisionBlock};
pub use logdet::{
    log_det_a, logdet_M, logdet_strategy, quad_form_M, set_logdet_strategy, solve_a, trace_ainv_w,
    LogDetStrategy,
};
pub use weights::{apply_A, apply_At, build_rook_lattice, Partition, SpatialWeights};

pub(crate) use weights::{apply_a_unchecked, apply_at_unchecked};
