//! Sparse spatial weight matrices and the operator `A = I - rho W`.

use std::sync::OnceLock;

use crate::error::{Result, SarError};
use crate::spatial::logdet::LogDetMethod;

/// Sparse nonnegative `n x n` weight matrix with zero diagonal.
///
/// Stored twice in compressed-row form (as `W` and as `W^T`) so that both
/// `W v` and `W^T v` are single passes over the nonzeros.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    n: usize,
    row_standardized: bool,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    t_row_ptr: Vec<usize>,
    t_cols: Vec<usize>,
    t_vals: Vec<f64>,
    logdet: OnceLock<LogDetMethod>,
}

fn compress(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    triplets.sort_by_key(|t| (t.0, t.1));
    let mut row_ptr = vec![0usize; n + 1];
    for &(i, _, _) in &triplets {
        row_ptr[i + 1] += 1;
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    let cols = triplets.iter().map(|t| t.1).collect();
    let vals = triplets.iter().map(|t| t.2).collect();
    (row_ptr, cols, vals)
}

impl SpatialWeights {
    /// Builds a weight matrix from `(row, col, weight)` triplets.
    ///
    /// Zero weights are dropped. When `row_standardize` is set, each row with
    /// at least one entry is rescaled to sum to one.
    pub fn from_entries(
        n: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
        row_standardize: bool,
    ) -> Result<Self> {
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, w) in entries {
            if i >= n || j >= n {
                return Err(SarError::Argument(format!(
                    "weight entry ({i}, {j}) outside a {n}-site matrix"
                )));
            }
            if i == j {
                return Err(SarError::Argument(format!(
                    "diagonal weight entry at site {i}"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(SarError::Argument(format!(
                    "weight ({i}, {j}) = {w} is not a finite nonnegative number"
                )));
            }
            if w > 0.0 {
                triplets.push((i, j, w));
            }
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        if let Some(dup) = triplets.windows(2).find(|p| p[0].0 == p[1].0 && p[0].1 == p[1].1) {
            return Err(SarError::Argument(format!(
                "duplicate weight entry ({}, {})",
                dup[0].0, dup[0].1
            )));
        }
        if row_standardize {
            let mut sums = vec![0.0; n];
            for &(i, _, w) in &triplets {
                sums[i] += w;
            }
            for t in &mut triplets {
                t.2 /= sums[t.0];
            }
        }
        let transposed = triplets.iter().map(|&(i, j, w)| (j, i, w)).collect();
        let (row_ptr, cols, vals) = compress(n, triplets);
        let (t_row_ptr, t_cols, t_vals) = compress(n, transposed);
        Ok(Self {
            n,
            row_standardized: row_standardize,
            row_ptr,
            cols,
            vals,
            t_row_ptr,
            t_cols,
            t_vals,
            logdet: OnceLock::new(),
        })
    }

    /// Marks a matrix whose non-empty rows already sum to one (within
    /// `1e-9`) as row-standardized, leaving the stored values untouched.
    pub fn into_row_standardized(mut self) -> Result<Self> {
        for i in 0..self.n {
            let (count, sum) = self.row(i).fold((0usize, 0.0), |(c, s), (_, w)| (c + 1, s + w));
            if count > 0 && (sum - 1.0).abs() > 1e-9 {
                return Err(SarError::Argument(format!("row {i} sums to {sum}, not 1")));
            }
        }
        self.row_standardized = true;
        Ok(self)
    }

    /// Whether every non-empty row sums to one within `1e-9`.
    pub fn rows_sum_to_one(&self) -> bool {
        (0..self.n).all(|i| {
            let (count, sum) = self.row(i).fold((0usize, 0.0), |(c, s), (_, w)| (c + 1, s + w));
            count == 0 || (sum - 1.0).abs() <= 1e-9
        })
    }

    /// An `n`-site matrix with no neighbours at all.
    pub fn empty(n: usize) -> Self {
        Self::from_entries(n, std::iter::empty(), false).expect("empty matrix is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row_standardized(&self) -> bool {
        self.row_standardized
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzero entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, w)| (i, j, w)))
    }

    /// Nonzeros `(col, weight)` of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// Nonzeros `(row, weight)` of column `j`.
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.t_row_ptr[j]..self.t_row_ptr[j + 1];
        self.t_cols[span.clone()].iter().copied().zip(self.t_vals[span].iter().copied())
    }

    /// Dense copy, used by oracles and the small-system factorizations.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for (i, j, w) in self.entries() {
            m[(i, j)] = w;
        }
        m
    }

    /// `W v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, w)| w * v[j]).sum())
            .collect()
    }

    /// `W^T v`.
    pub fn mul_t_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.col(j).map(|(i, w)| w * v[i]).sum())
            .collect()
    }

    /// Restriction of `W` to the given sites, re-indexed `0..idx.len()`.
    ///
    /// If this matrix was row-standardized, the restriction is standardized
    /// again so rows that lost neighbours still sum to one.
    pub fn restrict(&self, idx: &[usize]) -> Result<Self> {
        let mut position = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            if i >= self.n {
                return Err(SarError::Argument(format!("site {i} out of range")));
            }
            position[i] = k;
        }
        let mut entries = Vec::new();
        for (k, &i) in idx.iter().enumerate() {
            for (j, w) in self.row(i) {
                if position[j] != usize::MAX {
                    entries.push((k, position[j], w));
                }
            }
        }
        Self::from_entries(idx.len(), entries, self.row_standardized)
    }

    pub(crate) fn logdet_cell(&self) -> &OnceLock<LogDetMethod> {
        &self.logdet
    }

    pub(crate) fn logdet_method(&self) -> &LogDetMethod {
        self.logdet.get_or_init(|| LogDetMethod::select(self))
    }

    pub(crate) fn check_len(&self, context: &'static str, len: usize) -> Result<()> {
        if len != self.n {
            return Err(SarError::mismatch(context, self.n, len));
        }
        Ok(())
    }
}

/// Rook-contiguity lattice of `rows x cols` cells, numbered row-major.
pub fn build_rook_lattice(rows: usize, cols: usize, row_standardize: bool) -> Result<SpatialWeights> {
    if rows == 0 || cols == 0 {
        return Err(SarError::InvalidDimension(format!(
            "lattice must have at least one row and column, got {rows} x {cols}"
        )));
    }
    let n = rows * cols;
    let mut entries = Vec::with_capacity(4 * n);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if r > 0 {
                entries.push((i, i - cols, 1.0));
            }
            if r + 1 < rows {
                entries.push((i, i + cols, 1.0));
            }
            if c > 0 {
                entries.push((i, i - 1, 1.0));
            }
            if c + 1 < cols {
                entries.push((i, i + 1, 1.0));
            }
        }
    }
    SpatialWeights::from_entries(n, entries, row_standardize)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(SarError::Domain(format!("rho = {rho} must satisfy |rho| < 1")));
    }
    Ok(())
}

/// `A v = v - rho W v`.
#[allow(non_snake_case)]
pub fn apply_A(w: &SpatialWeights, rho: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_rho(rho)?;
    w.check_len("apply_A", v.len())?;
    Ok(apply_a_unchecked(w, rho, v))
}

/// `A^T v = v - rho W^T v`.
#[allow(non_snake_case)]
pub fn apply_At(w: &SpatialWeights, rho: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_rho(rho)?;
    w.check_len("apply_At", v.len())?;
    Ok(apply_at_unchecked(w, rho, v))
}

pub(crate) fn apply_a_unchecked(w: &SpatialWeights, rho: f64, v: &[f64]) -> Vec<f64> {
    (0..w.n)
        .map(|i| v[i] - rho * w.row(i).map(|(j, x)| x * v[j]).sum::<f64>())
        .collect()
}

pub(crate) fn apply_at_unchecked(w: &SpatialWeights, rho: f64, v: &[f64]) -> Vec<f64> {
    (0..w.n)
        .map(|j| v[j] - rho * w.col(j).map(|(i, x)| x * v[i]).sum::<f64>())
        .collect()
}

pub(crate) fn validate_rho(rho: f64) -> Result<()> {
    check_rho(rho)
}

/// Split of the site indices into a known block and a target block.
///
/// For the missing-data model the known block is the observed sites; for
/// blocked samplers it is everything outside the current block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    observed: Vec<usize>,
    unobserved: Vec<usize>,
}

impl Partition {
    /// Builds a partition from the target (unobserved) indices of an `n`-site system.
    pub fn from_unobserved(n: usize, mut unobserved: Vec<usize>) -> Result<Self> {
        unobserved.sort_unstable();
        if unobserved.windows(2).any(|p| p[0] == p[1]) {
            return Err(SarError::Argument("repeated index in partition".into()));
        }
        if unobserved.last().is_some_and(|&i| i >= n) {
            return Err(SarError::Argument("partition index out of range".into()));
        }
        let mut flag = vec![false; n];
        for &i in &unobserved {
            flag[i] = true;
        }
        let observed = (0..n).filter(|&i| !flag[i]).collect();
        Ok(Self {
            observed,
            unobserved,
        })
    }

    /// Builds a partition from a per-site mask (`true` = unobserved).
    pub fn from_mask(mask: &[bool]) -> Self {
        let unobserved = (0..mask.len()).filter(|&i| mask[i]).collect();
        let observed = (0..mask.len()).filter(|&i| !mask[i]).collect();
        Self {
            observed,
            unobserved,
        }
    }

    pub fn observed_idx(&self) -> &[usize] {
        &self.observed
    }

    pub fn unobserved_idx(&self) -> &[usize] {
        &self.unobserved
    }

    pub fn n(&self) -> usize {
        self.observed.len() + self.unobserved.len()
    }
}
