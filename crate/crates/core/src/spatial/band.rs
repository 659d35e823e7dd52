//! Banded LU factorization with partial pivoting.
//!
//! Sparse matrices are first reordered with reverse Cuthill-McKee so that the
//! nonzeros sit in a narrow band; elimination then costs `O(n * kl * (kl + ku))`.

use std::collections::VecDeque;

use crate::error::{Result, SarError};

/// Symmetric reordering that narrows the band of a sparse pattern.
#[derive(Debug, Clone)]
pub struct BandOrdering {
    /// `perm[k]` is the original index placed at position `k`.
    pub perm: Vec<usize>,
    /// Inverse of `perm`.
    pub position: Vec<usize>,
    pub lower: usize,
    pub upper: usize,
}

impl BandOrdering {
    /// Reverse Cuthill-McKee ordering of the pattern given as adjacency lists
    /// (the pattern is symmetrized internally).
    pub fn reverse_cuthill_mckee(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut by_degree: Vec<usize> = (0..n).collect();
        by_degree.sort_by_key(|&i| (adj[i].len(), i));
        for &start in &by_degree {
            if visited[start] {
                continue;
            }
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
                next.sort_by_key(|&u| (adj[u].len(), u));
                for u in next {
                    visited[u] = true;
                    queue.push_back(u);
                }
            }
        }
        order.reverse();
        let mut position = vec![0; n];
        for (k, &i) in order.iter().enumerate() {
            position[i] = k;
        }
        let (mut lower, mut upper) = (0, 0);
        for &(i, j) in edges {
            let (pi, pj) = (position[i], position[j]);
            if pi > pj {
                lower = lower.max(pi - pj);
            } else {
                upper = upper.max(pj - pi);
            }
        }
        // The pattern is used for A = I - rho W, whose transpose pattern matters
        // as well when W is not structurally symmetric.
        let band = lower.max(upper);
        Self {
            perm: order,
            position,
            lower: band,
            upper: band,
        }
    }
}

/// LU factors of a banded matrix, stored row-wise over the widened band.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    sign: f64,
}

impl BandLu {
    /// Factorizes the `n x n` matrix whose entries come from `entry(i, j)`,
    /// assumed zero outside `i - kl <= j <= i + ku`.
    pub fn factor(n: usize, kl: usize, ku: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
            sign: 1.0,
        };
        for (i, j, v) in entries {
            if j + kl < i || j > i + kl + ku {
                return Err(SarError::Argument(format!(
                    "entry ({i}, {j}) lies outside the declared band"
                )));
            }
            *lu.at_mut(i, j) += v;
        }
        let reach = kl + ku;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.at(k, k).abs();
            for i in k + 1..=last_row {
                let v = lu.at(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(SarError::Singular(format!("zero pivot at column {k}")));
            }
            lu.pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                lu.sign = -lu.sign;
                for j in k..=last_col {
                    let a = lu.at(k, j);
                    let b = lu.at(p, j);
                    *lu.at_mut(k, j) = b;
                    *lu.at_mut(p, j) = a;
                }
            }
            let pivot = lu.at(k, k);
            for i in k + 1..=last_row {
                let l = lu.at(i, k) / pivot;
                *lu.at_mut(i, k) = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let u = lu.at(k, j);
                        *lu.at_mut(i, j) -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j + self.kl - i]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.width + j + self.kl - i]
    }

    /// `(log |det|, sign of det)`.
    pub fn log_abs_det(&self) -> (f64, f64) {
        let mut log = 0.0;
        let mut sign = self.sign;
        for k in 0..self.n {
            let u = self.at(k, k);
            log += u.abs().ln();
            if u < 0.0 {
                sign = -sign;
            }
        }
        (log, sign)
    }

    /// Solves `M x = b` in place.
    #[allow(clippy::needless_range_loop)]
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let reach = self.width - 1 - self.kl;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.at(i, k) * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= self.at(k, j) * b[j];
            }
            b[k] = s / self.at(k, k);
        }
    }
}
