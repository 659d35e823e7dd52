//! Log-determinant and trace terms of `A = I - rho W`.
//!
//! Two strategies are available. When `W` is similar to a symmetric matrix
//! (true for symmetric weights and for row-standardized symmetric adjacency)
//! its real spectrum is computed once, after which
//! `log|det A| = sum log|1 - rho lambda_i|` and
//! `tr(A^-1 W) = sum lambda_i / (1 - rho lambda_i)` cost `O(n)` per call.
//! Otherwise a bandwidth-reducing ordering is computed once and `A` is
//! refactorized with a banded LU for every `rho`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, SarError};
use crate::model::ModelKind;
use crate::spatial::band::{BandLu, BandOrdering};
use crate::spatial::weights::{validate_rho, SpatialWeights};

/// Largest system for which the one-off dense eigendecomposition is used.
const SPECTRAL_MAX_N: usize = 2000;

/// How `log|det A|` is evaluated for a given weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogDetStrategy {
    Spectral,
    BandedLu,
}

#[derive(Debug, Clone)]
pub(crate) enum LogDetMethod {
    Spectral(Vec<f64>),
    Banded(BandOrdering),
}

impl LogDetMethod {
    pub(crate) fn select(w: &SpatialWeights) -> Self {
        if w.n() <= SPECTRAL_MAX_N {
            if let Some(scale) = symmetrizing_scale(w) {
                return Self::spectral(w, &scale);
            }
        }
        Self::banded(w)
    }

    fn build(w: &SpatialWeights, strategy: LogDetStrategy) -> Result<Self> {
        match strategy {
            LogDetStrategy::BandedLu => Ok(Self::banded(w)),
            LogDetStrategy::Spectral => symmetrizing_scale(w)
                .map(|s| Self::spectral(w, &s))
                .ok_or_else(|| {
                    SarError::Argument("weight matrix is not similar to a symmetric matrix".into())
                }),
        }
    }

    fn spectral(w: &SpatialWeights, scale: &[f64]) -> Self {
        let n = w.n();
        let mut s = DMatrix::zeros(n, n);
        for (i, j, x) in w.entries() {
            s[(i, j)] = x * (scale[j] / scale[i]).sqrt();
        }
        // Symmetrize away rounding noise before the symmetric solver.
        let s = (&s + s.transpose()) * 0.5;
        let eig = SymmetricEigen::new(s);
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(f64::total_cmp);
        Self::Spectral(values)
    }

    fn banded(w: &SpatialWeights) -> Self {
        let edges: Vec<(usize, usize)> = w.entries().map(|(i, j, _)| (i, j)).collect();
        Self::Banded(BandOrdering::reverse_cuthill_mckee(w.n(), &edges))
    }

    pub(crate) fn strategy(&self) -> LogDetStrategy {
        match self {
            Self::Spectral(_) => LogDetStrategy::Spectral,
            Self::Banded(_) => LogDetStrategy::BandedLu,
        }
    }
}

/// Finds positive `s` with `W = diag(s) C`, `C` symmetric, if one exists.
fn symmetrizing_scale(w: &SpatialWeights) -> Option<Vec<f64>> {
    let n = w.n();
    let dense_lookup = |i: usize, j: usize| w.row(i).find(|&(c, _)| c == j).map(|(_, x)| x);
    let mut scale = vec![0.0; n];
    let mut stack = Vec::new();
    for root in 0..n {
        if scale[root] != 0.0 {
            continue;
        }
        scale[root] = 1.0;
        stack.push(root);
        while let Some(i) = stack.pop() {
            for (j, wij) in w.row(i) {
                let wji = dense_lookup(j, i)?;
                // w_ij = s_i c_ij and w_ji = s_j c_ij.
                let sj = scale[i] * wji / wij;
                if scale[j] == 0.0 {
                    scale[j] = sj;
                    stack.push(j);
                } else if (scale[j] - sj).abs() > 1e-10 * scale[j].abs().max(sj.abs()) {
                    return None;
                }
            }
        }
    }
    // Column pattern must match the row pattern as well.
    for (i, j, _) in w.entries() {
        dense_lookup(j, i)?;
    }
    Some(scale)
}

/// The strategy this matrix uses (selecting it on first call).
pub fn logdet_strategy(w: &SpatialWeights) -> LogDetStrategy {
    w.logdet_method().strategy()
}

/// Pins the log-determinant strategy before first use.
///
/// Returns an error if a different strategy was already selected or if the
/// spectral strategy is requested for a matrix that does not support it.
pub fn set_logdet_strategy(w: &SpatialWeights, strategy: LogDetStrategy) -> Result<()> {
    let method = LogDetMethod::build(w, strategy)?;
    let _ = w.logdet_cell().set(method);
    let current = w.logdet_method();
    if current.strategy() != strategy {
        return Err(SarError::Argument(format!(
            "log-determinant strategy already fixed to {:?}",
            current.strategy()
        )));
    }
    Ok(())
}

fn factor_a(w: &SpatialWeights, ord: &BandOrdering, rho: f64) -> Result<BandLu> {
    let n = w.n();
    let diag = (0..n).map(|k| (k, k, 1.0));
    let off = w
        .entries()
        .map(|(i, j, x)| (ord.position[i], ord.position[j], -rho * x));
    BandLu::factor(n, ord.lower, ord.upper, diag.chain(off))
}

/// `log|det(I - rho W)|`, failing when the determinant is not positive.
pub fn log_det_a(w: &SpatialWeights, rho: f64) -> Result<f64> {
    validate_rho(rho)?;
    let (log, sign) = match w.logdet_method() {
        LogDetMethod::Spectral(eig) => {
            let mut log = 0.0;
            let mut sign = 1.0;
            for &l in eig {
                let f = 1.0 - rho * l;
                log += f.abs().ln();
                if f < 0.0 {
                    sign = -sign;
                }
            }
            (log, sign)
        }
        LogDetMethod::Banded(ord) => {
            if w.n() == 0 {
                (0.0, 1.0)
            } else {
                factor_a(w, ord, rho)?.log_abs_det()
            }
        }
    };
    if !(sign > 0.0) || !log.is_finite() {
        return Err(SarError::Singular(format!(
            "det(I - rho W) is not positive at rho = {rho}"
        )));
    }
    Ok(log)
}

/// `tr(A^-1 W)`, so that `d log|det A| / d rho = -tr(A^-1 W)`.
pub fn trace_ainv_w(w: &SpatialWeights, rho: f64) -> Result<f64> {
    validate_rho(rho)?;
    match w.logdet_method() {
        LogDetMethod::Spectral(eig) => Ok(eig.iter().map(|&l| l / (1.0 - rho * l)).sum()),
        LogDetMethod::Banded(ord) => {
            let n = w.n();
            if n == 0 {
                return Ok(0.0);
            }
            let lu = factor_a(w, ord, rho)?;
            let mut total = 0.0;
            let mut rhs = vec![0.0; n];
            for j in 0..n {
                if w.col(j).next().is_none() {
                    continue;
                }
                rhs.iter_mut().for_each(|v| *v = 0.0);
                for (i, x) in w.col(j) {
                    rhs[ord.position[i]] = x;
                }
                lu.solve_in_place(&mut rhs);
                total += rhs[ord.position[j]];
            }
            Ok(total)
        }
    }
}

/// Solves `(I - rho W) x = b` with a banded LU.
pub fn solve_a(w: &SpatialWeights, rho: f64, b: &[f64]) -> Result<Vec<f64>> {
    validate_rho(rho)?;
    w.check_len("solve_a", b.len())?;
    let n = w.n();
    if n == 0 {
        return Ok(Vec::new());
    }
    let ord = match w.logdet_method() {
        LogDetMethod::Banded(ord) => ord.clone(),
        LogDetMethod::Spectral(_) => {
            let edges: Vec<(usize, usize)> = w.entries().map(|(i, j, _)| (i, j)).collect();
            BandOrdering::reverse_cuthill_mckee(n, &edges)
        }
    };
    let lu = factor_a(w, &ord, rho)?;
    let mut x = vec![0.0; n];
    for i in 0..n {
        x[ord.position[i]] = b[i];
    }
    lu.solve_in_place(&mut x);
    Ok((0..n).map(|i| x[ord.position[i]]).collect())
}

fn check_tau(kind: ModelKind, n: usize, tau: Option<&[f64]>) -> Result<()> {
    if kind.is_student_t() {
        let tau = tau.ok_or_else(|| SarError::Argument("t-error model requires tau".into()))?;
        if tau.len() != n {
            return Err(SarError::mismatch("tau", n, tau.len()));
        }
        if let Some(t) = tau.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(SarError::Domain(format!("tau entry {t} must be positive")));
        }
    }
    Ok(())
}

/// `log|M|`, with `M = A^T A` (Gaussian errors) or `A^T diag(tau)^-1 A` (t errors).
#[allow(non_snake_case)]
pub fn logdet_M(kind: ModelKind, w: &SpatialWeights, rho: f64, tau: Option<&[f64]>) -> Result<f64> {
    check_tau(kind, w.n(), tau)?;
    let mut v = 2.0 * log_det_a(w, rho)?;
    if kind.is_student_t() {
        v -= tau.unwrap().iter().map(|t| t.ln()).sum::<f64>();
    }
    Ok(v)
}

/// `r^T M r`, computed as a weighted sum of squares of `A r`.
#[allow(non_snake_case)]
pub fn quad_form_M(kind: ModelKind, w: &SpatialWeights, rho: f64, tau: Option<&[f64]>, r: &[f64]) -> Result<f64> {
    check_tau(kind, w.n(), tau)?;
    let ar = crate::spatial::apply_A(w, rho, r)?;
    Ok(match (kind.is_student_t(), tau) {
        (true, Some(tau)) => ar.iter().zip(tau).map(|(a, t)| a * a / t).sum(),
        _ => ar.iter().map(|a| a * a).sum(),
    })
}
