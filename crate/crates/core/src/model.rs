//! Model kinds, parameter containers, datasets and the unconstrained
//! parameter layout shared by the likelihood, gradient and optimizer code.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SarError};
use crate::spatial::{Partition, SpatialWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorFamily {
    Gaussian,
    StudentT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    YeoJohnson,
}

/// One of the four spatial error models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelKind {
    pub error_family: ErrorFamily,
    pub transform: Transform,
}

impl ModelKind {
    pub const SEM_GAU: Self = Self::new(ErrorFamily::Gaussian, Transform::Identity);
    pub const SEM_T: Self = Self::new(ErrorFamily::StudentT, Transform::Identity);
    pub const YJ_SEM_GAU: Self = Self::new(ErrorFamily::Gaussian, Transform::YeoJohnson);
    pub const YJ_SEM_T: Self = Self::new(ErrorFamily::StudentT, Transform::YeoJohnson);

    pub const ALL: [Self; 4] = [Self::SEM_GAU, Self::SEM_T, Self::YJ_SEM_GAU, Self::YJ_SEM_T];

    pub const fn new(error_family: ErrorFamily, transform: Transform) -> Self {
        Self {
            error_family,
            transform,
        }
    }

    pub fn is_student_t(self) -> bool {
        self.error_family == ErrorFamily::StudentT
    }

    pub fn is_yeo_johnson(self) -> bool {
        self.transform == Transform::YeoJohnson
    }

    /// Stable lowercase name used in files and on the command line.
    pub fn name(self) -> &'static str {
        match (self.error_family, self.transform) {
            (ErrorFamily::Gaussian, Transform::Identity) => "sem-gau",
            (ErrorFamily::StudentT, Transform::Identity) => "sem-t",
            (ErrorFamily::Gaussian, Transform::YeoJohnson) => "yj-sem-gau",
            (ErrorFamily::StudentT, Transform::YeoJohnson) => "yj-sem-t",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = SarError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| {
                SarError::Argument(format!(
                    "unknown model kind '{s}' (expected sem-gau, sem-t, yj-sem-gau or yj-sem-t)"
                ))
            })
    }
}

/// Constrained model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub rho: f64,
    pub nu: Option<f64>,
    pub gamma: Option<f64>,
}

impl ModelParams {
    /// Checks presence and range of every field for the given kind.
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(SarError::Domain(format!("sigma2 = {} must be positive", self.sigma2)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(SarError::Domain(format!("rho = {} must satisfy |rho| < 1", self.rho)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(SarError::Domain("beta must be finite".into()));
        }
        match (kind.is_student_t(), self.nu) {
            (true, Some(nu)) if nu > 3.0 && nu.is_finite() => {}
            (true, Some(nu)) => return Err(SarError::Domain(format!("nu = {nu} must exceed 3"))),
            (true, None) => return Err(SarError::Argument(format!("{kind} requires nu"))),
            (false, Some(_)) => return Err(SarError::Argument(format!("{kind} takes no nu"))),
            (false, None) => {}
        }
        match (kind.is_yeo_johnson(), self.gamma) {
            (true, Some(g)) if g > 0.0 && g < 2.0 => {}
            (true, Some(g)) => return Err(SarError::Domain(format!("gamma = {g} must lie in (0, 2)"))),
            (true, None) => return Err(SarError::Argument(format!("{kind} requires gamma"))),
            (false, Some(_)) => return Err(SarError::Argument(format!("{kind} takes no gamma"))),
            (false, None) => {}
        }
        Ok(())
    }

    /// Stacked scalar summary `(beta..., sigma2, rho, nu?, gamma?)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.beta.iter().copied().collect();
        v.push(self.sigma2);
        v.push(self.rho);
        v.extend(self.nu);
        v.extend(self.gamma);
        v
    }

    /// Inverse of [`ModelParams::to_vec`].
    pub fn from_vec(kind: ModelKind, n_beta: usize, v: &[f64]) -> Result<Self> {
        let expected = n_beta + 2 + kind.is_student_t() as usize + kind.is_yeo_johnson() as usize;
        if v.len() != expected {
            return Err(SarError::mismatch("parameter vector", expected, v.len()));
        }
        let mut k = n_beta + 2;
        let nu = kind.is_student_t().then(|| {
            k += 1;
            v[k - 1]
        });
        let gamma = kind.is_yeo_johnson().then(|| v[k]);
        Ok(Self {
            beta: DVector::from_column_slice(&v[..n_beta]),
            sigma2: v[n_beta],
            rho: v[n_beta + 1],
            nu,
            gamma,
        })
    }

    /// Column names matching [`ModelParams::to_vec`].
    pub fn names(kind: ModelKind, n_beta: usize) -> Vec<String> {
        let mut names: Vec<String> = (0..n_beta).map(|j| format!("beta{j}")).collect();
        names.push("sigma2".into());
        names.push("rho".into());
        if kind.is_student_t() {
            names.push("nu".into());
        }
        if kind.is_yeo_johnson() {
            names.push("gamma".into());
        }
        names
    }
}

/// Coefficients of the logistic missingness model.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessParams {
    pub psi_x: DVector<f64>,
    pub psi_y: f64,
}

impl MissingnessParams {
    pub fn zeros(n_psi_x: usize) -> Self {
        Self {
            psi_x: DVector::zeros(n_psi_x),
            psi_y: 0.0,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.psi_x.iter().copied().collect();
        v.push(self.psi_y);
        v
    }

    pub fn from_vec(v: &[f64]) -> Result<Self> {
        let (&psi_y, psi_x) = v
            .split_last()
            .ok_or_else(|| SarError::Argument("empty missingness parameter vector".into()))?;
        Ok(Self {
            psi_x: DVector::from_column_slice(psi_x),
            psi_y,
        })
    }

    pub fn names(n_psi_x: usize) -> Vec<String> {
        let mut names: Vec<String> = (0..n_psi_x).map(|j| format!("psi_x{j}")).collect();
        names.push("psi_y".into());
        names
    }
}

/// Prior variances of the zero-mean Gaussian priors on the unconstrained scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub var_beta: f64,
    pub var_omega: f64,
    pub var_rho: f64,
    pub var_nu: f64,
    pub var_gamma: f64,
    pub var_psi: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            var_beta: 100.0,
            var_omega: 100.0,
            var_rho: 100.0,
            var_nu: 100.0,
            var_gamma: 100.0,
            var_psi: 100.0,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.var_beta,
            self.var_omega,
            self.var_rho,
            self.var_nu,
            self.var_gamma,
            self.var_psi,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(SarError::Argument("prior variances must be positive".into()))
        }
    }
}

/// Responses, designs and weights for one analysis.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Responses; `None` marks a missing value.
    pub y: Vec<Option<f64>>,
    /// `n x (r + 1)` design with a leading intercept column.
    pub x: DMatrix<f64>,
    /// `n x (q + 1)` missingness design with a leading intercept column.
    pub xstar: DMatrix<f64>,
    pub weights: Arc<SpatialWeights>,
}

impl Dataset {
    pub fn new(
        y: Vec<Option<f64>>,
        x: DMatrix<f64>,
        xstar: DMatrix<f64>,
        weights: Arc<SpatialWeights>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(SarError::mismatch("design rows", n, x.nrows()));
        }
        if xstar.nrows() != n {
            return Err(SarError::mismatch("missingness design rows", n, xstar.nrows()));
        }
        if weights.n() != n {
            return Err(SarError::mismatch("weight matrix size", n, weights.n()));
        }
        if x.ncols() == 0 || xstar.ncols() == 0 {
            return Err(SarError::InvalidDimension("designs need an intercept column".into()));
        }
        if x.iter().chain(xstar.iter()).any(|v| !v.is_finite()) {
            return Err(SarError::Format("design matrices must be finite".into()));
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SarError::Format("observed responses must be finite".into()));
        }
        Ok(Self {
            y,
            x,
            xstar,
            weights,
        })
    }

    /// Complete-data constructor with an intercept-only missingness design.
    pub fn complete(y: DVector<f64>, x: DMatrix<f64>, weights: Arc<SpatialWeights>) -> Result<Self> {
        let n = y.len();
        Self::new(y.iter().map(|v| Some(*v)).collect(), x, DMatrix::from_element(n, 1, 1.0), weights)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of regression coefficients, intercept included.
    pub fn n_beta(&self) -> usize {
        self.x.ncols()
    }

    /// Number of missingness covariate coefficients, intercept included.
    pub fn n_psi_x(&self) -> usize {
        self.xstar.ncols()
    }

    pub fn is_complete(&self) -> bool {
        self.y.iter().all(Option::is_some)
    }

    /// The response vector, failing if any entry is missing.
    pub fn complete_y(&self) -> Result<DVector<f64>> {
        self.y
            .iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| SarError::Argument(format!("response {i} is missing"))))
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }

    pub fn missing_pattern(&self) -> MissingPattern {
        MissingPattern::from_responses(&self.y)
    }
}

/// Missingness indicators with the derived observed/unobserved split.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingPattern {
    pub m: Vec<bool>,
    pub partition: Partition,
    pub y_observed: Vec<f64>,
}

impl MissingPattern {
    pub fn from_responses(y: &[Option<f64>]) -> Self {
        let m: Vec<bool> = y.iter().map(Option::is_none).collect();
        let partition = Partition::from_mask(&m);
        let y_observed = y.iter().flatten().copied().collect();
        Self {
            m,
            partition,
            y_observed,
        }
    }

    pub fn n_unobserved(&self) -> usize {
        self.partition.unobserved_idx().len()
    }

    /// Completed response vector with `y_u` placed in the unobserved slots.
    pub fn complete(&self, y_u: &[f64]) -> Result<DVector<f64>> {
        let uidx = self.partition.unobserved_idx();
        if y_u.len() != uidx.len() {
            return Err(SarError::mismatch("imputed responses", uidx.len(), y_u.len()));
        }
        let mut y = DVector::zeros(self.m.len());
        for (&i, &v) in self.partition.observed_idx().iter().zip(&self.y_observed) {
            y[i] = v;
        }
        for (&i, &v) in uidx.iter().zip(y_u) {
            y[i] = v;
        }
        Ok(y)
    }
}

/// Positions of each parameter block inside the unconstrained vector.
///
/// Layout: `[beta, omega', rho', nu'?, gamma'?, tau'(n)?, psi_x?, psi_y?]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub kind: ModelKind,
    pub n_beta: usize,
    pub n_sites: usize,
    /// `Some(q + 1)` when the missingness coefficients are part of the vector.
    pub n_psi_x: Option<usize>,
}

impl ParamLayout {
    pub fn full(kind: ModelKind, n_beta: usize, n_sites: usize) -> Self {
        Self {
            kind,
            n_beta,
            n_sites,
            n_psi_x: None,
        }
    }

    pub fn missing(kind: ModelKind, n_beta: usize, n_sites: usize, n_psi_x: usize) -> Self {
        Self {
            kind,
            n_beta,
            n_sites,
            n_psi_x: Some(n_psi_x),
        }
    }

    pub fn for_full_data(kind: ModelKind, data: &Dataset) -> Self {
        Self::full(kind, data.n_beta(), data.n())
    }

    pub fn for_missing_data(kind: ModelKind, data: &Dataset) -> Self {
        Self::missing(kind, data.n_beta(), data.n(), data.n_psi_x())
    }

    pub fn beta(&self) -> Range<usize> {
        0..self.n_beta
    }

    pub fn omega(&self) -> usize {
        self.n_beta
    }

    pub fn rho(&self) -> usize {
        self.n_beta + 1
    }

    pub fn nu(&self) -> Option<usize> {
        self.kind.is_student_t().then_some(self.n_beta + 2)
    }

    pub fn gamma(&self) -> Option<usize> {
        self.kind
            .is_yeo_johnson()
            .then_some(self.n_beta + 2 + self.kind.is_student_t() as usize)
    }

    fn tau_start(&self) -> usize {
        self.n_beta + 2 + self.kind.is_student_t() as usize + self.kind.is_yeo_johnson() as usize
    }

    pub fn tau(&self) -> Option<Range<usize>> {
        let start = self.tau_start();
        self.kind.is_student_t().then_some(start..start + self.n_sites)
    }

    fn psi_start(&self) -> usize {
        self.tau_start() + if self.kind.is_student_t() { self.n_sites } else { 0 }
    }

    pub fn psi_x(&self) -> Option<Range<usize>> {
        let start = self.psi_start();
        self.n_psi_x.map(|q| start..start + q)
    }

    pub fn psi_y(&self) -> Option<usize> {
        self.n_psi_x.map(|q| self.psi_start() + q)
    }

    /// Total length `s` of the unconstrained vector.
    pub fn len(&self) -> usize {
        self.psi_start() + self.n_psi_x.map_or(0, |q| q + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_missingness(&self) -> bool {
        self.n_psi_x.is_some()
    }

    /// Name of every coordinate on the unconstrained scale.
    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.n_beta).map(|j| format!("beta{j}")).collect();
        names.push("log_sigma2".into());
        names.push("rho_link".into());
        if self.kind.is_student_t() {
            names.push("nu_link".into());
        }
        if self.kind.is_yeo_johnson() {
            names.push("gamma_link".into());
        }
        if self.kind.is_student_t() {
            names.extend((0..self.n_sites).map(|i| format!("log_tau{i}")));
        }
        if let Some(q) = self.n_psi_x {
            names.extend(MissingnessParams::names(q));
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_lengths_match_parameter_counts() {
        let (r, q, n) = (5, 1, 16);
        let nb = r + 1;
        let full: Vec<usize> = ModelKind::ALL
            .iter()
            .map(|&k| ParamLayout::full(k, nb, n).len())
            .collect();
        assert_eq!(full, vec![r + 3, r + 4 + n, r + 4, r + 5 + n]);
        let missing: Vec<usize> = ModelKind::ALL
            .iter()
            .map(|&k| ParamLayout::missing(k, nb, n, q + 1).len())
            .collect();
        assert_eq!(missing, vec![r + q + 5, r + q + 6 + n, r + q + 6, r + q + 7 + n]);
    }

    #[test]
    fn layout_blocks_are_contiguous() {
        let l = ParamLayout::missing(ModelKind::YJ_SEM_T, 3, 4, 2);
        assert_eq!(l.beta(), 0..3);
        assert_eq!(l.omega(), 3);
        assert_eq!(l.rho(), 4);
        assert_eq!(l.nu(), Some(5));
        assert_eq!(l.gamma(), Some(6));
        assert_eq!(l.tau(), Some(7..11));
        assert_eq!(l.psi_x(), Some(11..13));
        assert_eq!(l.psi_y(), Some(13));
        assert_eq!(l.len(), 14);
        assert_eq!(l.coordinate_names().len(), 14);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("sem-probit".parse::<ModelKind>().is_err());
    }

    #[test]
    fn params_vec_round_trip() {
        let p = ModelParams {
            beta: DVector::from_vec(vec![1.0, -2.0]),
            sigma2: 0.5,
            rho: 0.3,
            nu: Some(5.0),
            gamma: Some(0.7),
        };
        let v = p.to_vec();
        assert_eq!(ModelParams::from_vec(ModelKind::YJ_SEM_T, 2, &v).unwrap(), p);
        assert!(p.validate(ModelKind::YJ_SEM_T).is_ok());
        assert!(p.validate(ModelKind::SEM_GAU).is_err());
    }

    #[test]
    fn pattern_completion_preserves_observed() {
        let y = vec![Some(1.0), None, Some(3.0), None];
        let pat = MissingPattern::from_responses(&y);
        assert_eq!(pat.partition.unobserved_idx(), &[1, 3]);
        let full = pat.complete(&[-1.0, -3.0]).unwrap();
        assert_eq!(full.as_slice(), &[1.0, -1.0, 3.0, -3.0]);
        assert!(pat.complete(&[0.0]).is_err());
    }
}
