//! Conditional Gaussian of a target block of sites given the rest.
//!
//! With precision `M / sigma^2`, the target block `u` given the known block
//! `k` is Gaussian with mean offset `-M_uu^-1 M_uk r_k` and covariance
//! `sigma^2 M_uu^-1`. `M_uu` is assembled from the sparse columns of `A`;
//! the full `M` is never formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SarError};
use crate::model::ModelKind;
use crate::spatial::weights::{apply_a_unchecked, validate_rho, Partition, SpatialWeights};

/// Cholesky factor of the precision block `M_uu` for a fixed target set.
#[derive(Debug, Clone)]
pub struct PrecisionBlock {
    target: Vec<usize>,
    chol: Cholesky<f64, Dyn>,
}

fn tau_weights(kind: ModelKind, n: usize, tau: Option<&[f64]>) -> Result<Option<Vec<f64>>> {
    if !kind.is_student_t() {
        return Ok(None);
    }
    let tau = tau.ok_or_else(|| SarError::Argument("t-error model requires tau".into()))?;
    if tau.len() != n {
        return Err(SarError::mismatch("tau", n, tau.len()));
    }
    if tau.iter().any(|t| !(*t > 0.0)) {
        return Err(SarError::Domain("tau entries must be positive".into()));
    }
    Ok(Some(tau.iter().map(|t| 1.0 / t).collect()))
}

impl PrecisionBlock {
    /// Factorizes `M_uu` for the sorted target indices.
    pub fn new(
        kind: ModelKind,
        w: &SpatialWeights,
        rho: f64,
        tau: Option<&[f64]>,
        target: &[usize],
    ) -> Result<Self> {
        validate_rho(rho)?;
        let n = w.n();
        let inv_tau = tau_weights(kind, n, tau)?;
        let mut slot = vec![usize::MAX; n];
        for (a, &i) in target.iter().enumerate() {
            if i >= n {
                return Err(SarError::Argument(format!("site {i} out of range")));
            }
            slot[i] = a;
        }
        let b = target.len();
        let mut m = DMatrix::<f64>::zeros(b, b);
        let mut row_entries: Vec<(usize, f64)> = Vec::new();
        for k in 0..n {
            // Row k of A restricted to the target columns.
            row_entries.clear();
            if slot[k] != usize::MAX {
                row_entries.push((slot[k], 1.0));
            }
            for (j, x) in w.row(k) {
                if slot[j] != usize::MAX {
                    row_entries.push((slot[j], -rho * x));
                }
            }
            if row_entries.is_empty() {
                continue;
            }
            let scale = inv_tau.as_ref().map_or(1.0, |t| t[k]);
            for &(a, va) in &row_entries {
                for &(c, vc) in &row_entries {
                    m[(a, c)] += scale * va * vc;
                }
            }
        }
        let chol = Cholesky::new(m).ok_or_else(|| {
            SarError::Singular("conditional precision block is not positive definite".into())
        })?;
        Ok(Self {
            target: target.to_vec(),
            chol,
        })
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// `-M_uu^-1 M_uk r_k`, where `r_full` carries the known residuals and
    /// whatever sits in the target slots is ignored.
    pub fn mean_offset(
        &self,
        kind: ModelKind,
        w: &SpatialWeights,
        rho: f64,
        tau: Option<&[f64]>,
        r_full: &[f64],
    ) -> Result<DVector<f64>> {
        w.check_len("conditional residual", r_full.len())?;
        let inv_tau = tau_weights(kind, w.n(), tau)?;
        let mut r = r_full.to_vec();
        for &i in &self.target {
            r[i] = 0.0;
        }
        let mut v = apply_a_unchecked(w, rho, &r);
        if let Some(t) = &inv_tau {
            v.iter_mut().zip(t).for_each(|(x, s)| *x *= s);
        }
        // (A^T v) restricted to the target sites.
        let rhs = DVector::from_iterator(
            self.target.len(),
            self.target
                .iter()
                .map(|&j| v[j] - rho * w.col(j).map(|(i, x)| x * v[i]).sum::<f64>()),
        );
        Ok(-self.chol.solve(&rhs))
    }

    /// Draws `x ~ N(0, sigma2 M_uu^-1)`.
    pub fn draw_noise<R: Rng + ?Sized>(&self, sigma2: f64, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(self.len(), (0..self.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // L^T x = z gives Cov(x) = (L L^T)^-1.
        let x = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        x * sigma2.sqrt()
    }

    /// `sigma2 M_uu^-1` as a dense matrix (for diagnostics and oracles).
    pub fn covariance(&self, sigma2: f64) -> DMatrix<f64> {
        self.chol.inverse() * sigma2
    }
}

/// Conditional distribution of the target block on the transformed scale.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    pub mean_offset: DVector<f64>,
    pub precision: PrecisionBlock,
    pub sigma2: f64,
}

impl ConditionalGaussian {
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.covariance(self.sigma2)
    }
}

/// Conditional of `partition.unobserved_idx()` given the residuals
/// `r_known` at `partition.observed_idx()` (same order).
pub fn conditional_gaussian(
    kind: ModelKind,
    w: &SpatialWeights,
    rho: f64,
    sigma2: f64,
    tau: Option<&[f64]>,
    partition: &Partition,
    r_known: &[f64],
) -> Result<ConditionalGaussian> {
    if partition.n() != w.n() {
        return Err(SarError::mismatch("partition size", w.n(), partition.n()));
    }
    if r_known.len() != partition.observed_idx().len() {
        return Err(SarError::mismatch(
            "known residuals",
            partition.observed_idx().len(),
            r_known.len(),
        ));
    }
    if !(sigma2 > 0.0) {
        return Err(SarError::Domain(format!("sigma2 = {sigma2} must be positive")));
    }
    let precision = PrecisionBlock::new(kind, w, rho, tau, partition.unobserved_idx())?;
    let mut r_full = vec![0.0; w.n()];
    for (&i, &v) in partition.observed_idx().iter().zip(r_known) {
        r_full[i] = v;
    }
    let mean_offset = precision.mean_offset(kind, w, rho, tau, &r_full)?;
    Ok(ConditionalGaussian {
        mean_offset,
        precision,
        sigma2,
    })
}
