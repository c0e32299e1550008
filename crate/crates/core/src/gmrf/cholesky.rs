//! Envelope (profile) Cholesky factorization under a reverse Cuthill-McKee
//! ordering.
//!
//! For areal graphs the envelope of the reordered precision is narrow, the
//! factor is dense inside it and no symbolic phase is needed. The same layout
//! carries the selected inverse computed by the Takahashi recursions, which
//! gives the inverse entries on the diagonal and on every edge without
//! forming the dense inverse.

use std::collections::VecDeque;

use super::sparse::SymmetricSparse;
use crate::error::{Error, Result};

/// Reverse Cuthill-McKee ordering of the off-diagonal pattern of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &SymmetricSparse) -> Vec<usize> {
    let n = a.n();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut neighbours = Vec::new();
    while order.len() < n {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node remains");
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            neighbours.clear();
            neighbours.extend(a.row(v).map(|(j, _)| j).filter(|&j| !visited[j]));
            neighbours.sort_by_key(|&j| (degree[j], j));
            for &j in &neighbours {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Lower-triangular factor `L` with `P A P' = L L'`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `inv_perm[old] = new`.
    inv_perm: Vec<usize>,
    /// First stored column of each row of `L`.
    first: Vec<usize>,
    /// Start of each row's slice in `values`.
    offset: Vec<usize>,
    values: Vec<f64>,
    log_det: f64,
}

impl CholeskyFactor {
    pub fn new(a: &SymmetricSparse) -> Result<Self> {
        let perm = rcm_ordering(a);
        Self::with_ordering(a, perm)
    }

    /// Factorizes with a caller-supplied ordering (`perm[new] = old`).
    pub fn with_ordering(a: &SymmetricSparse, perm: Vec<usize>) -> Result<Self> {
        let n = a.n();
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        let mut first = vec![0; n];
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for k in 0..n {
            let old = perm[k];
            first[k] = a.row(old).map(|(j, _)| inv_perm[j]).fold(k, usize::min);
            offset.push(offset[k] + (k - first[k] + 1));
        }
        let mut values = vec![0.0; offset[n]];

        for k in 0..n {
            let old = perm[k];
            let row = offset[k];
            let fk = first[k];
            values[row + (k - fk)] = a.diagonal()[old];
            for (j, v) in a.row(old) {
                let jn = inv_perm[j];
                if jn < k {
                    values[row + (jn - fk)] = v;
                }
            }
            for j in fk..k {
                let fj = first[j];
                let start = fk.max(fj);
                let mut acc = values[row + (j - fk)];
                let rj = offset[j];
                for m in start..j {
                    acc -= values[row + (m - fk)] * values[rj + (m - fj)];
                }
                values[row + (j - fk)] = acc / values[rj + (j - fj)];
            }
            let mut d = values[row + (k - fk)];
            for m in fk..k {
                let l = values[row + (m - fk)];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: old });
            }
            values[row + (k - fk)] = d.sqrt();
        }

        let log_det = 2.0 * (0..n).map(|k| values[offset[k] + (k - first[k])].ln()).sum::<f64>();
        Ok(CholeskyFactor {
            perm,
            inv_perm,
            first,
            offset,
            values,
            log_det,
        })
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// `ln det A`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Number of stored entries of `L`.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn l(&self, k: usize, j: usize) -> f64 {
        self.values[self.offset[k] + (j - self.first[k])]
    }

    /// `L` in the permuted ordering, as a dense lower-triangular matrix.
    pub fn dense_factor(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut out = vec![vec![0.0; n]; n];
        for (k, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate().take(k + 1).skip(self.first[k]) {
                *cell = self.l(k, j);
            }
        }
        out
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// `L L'` mapped back to the original ordering.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let l = self.dense_factor();
        let mut out = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..n {
                let s: f64 = (0..=a.min(b)).map(|m| l[a][m] * l[b][m]).sum();
                out[self.perm[a]][self.perm[b]] = s;
            }
        }
        out
    }

    fn forward_in_place(&self, y: &mut [f64]) {
        for k in 0..self.n() {
            let mut acc = y[k];
            for m in self.first[k]..k {
                acc -= self.l(k, m) * y[m];
            }
            y[k] = acc / self.l(k, k);
        }
    }

    fn backward_in_place(&self, x: &mut [f64]) {
        for k in (0..self.n()).rev() {
            x[k] /= self.l(k, k);
            let xk = x[k];
            for m in self.first[k]..k {
                x[m] -= self.l(k, m) * xk;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.forward_in_place(&mut y);
        self.backward_in_place(&mut y);
        let mut x = vec![0.0; self.n()];
        for (k, &old) in self.perm.iter().enumerate() {
            x[old] = y[k];
        }
        x
    }

    /// Maps a standard-normal vector `z` to a draw with covariance `A^{-1}`:
    /// `P' L^{-T} z`.
    pub fn whiten_inverse(&self, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        self.backward_in_place(&mut y);
        let mut x = vec![0.0; self.n()];
        for (k, &old) in self.perm.iter().enumerate() {
            x[old] = y[k];
        }
        x
    }

    /// Entries of `A^{-1}` on the envelope of the factor, which contains the
    /// diagonal and every nonzero of `A`.
    pub fn selected_inverse(&self) -> SelectedInverse {
        let n = self.n();
        let mut sigma = vec![0.0; self.values.len()];
        // Rows k > i with an entry in column i of L.
        let mut column_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..n {
            for j in self.first[k]..k {
                column_rows[j].push(k);
            }
        }
        let at = |first: &[usize], offset: &[usize], a: usize, b: usize| {
            let (r, c) = if a >= b { (a, b) } else { (b, a) };
            offset[r] + (c - first[r])
        };
        for i in (0..n).rev() {
            let lii = self.l(i, i);
            let rows = &column_rows[i];
            for &j in rows.iter().rev() {
                let mut acc = 0.0;
                for &k in rows {
                    acc += self.l(k, i) * sigma[at(&self.first, &self.offset, k, j)];
                }
                sigma[at(&self.first, &self.offset, j, i)] = -acc / lii;
            }
            let mut acc = 0.0;
            for &k in rows {
                acc += self.l(k, i) * sigma[at(&self.first, &self.offset, k, i)];
            }
            sigma[at(&self.first, &self.offset, i, i)] = (1.0 / lii - acc) / lii;
        }
        SelectedInverse {
            inv_perm: self.inv_perm.clone(),
            first: self.first.clone(),
            offset: self.offset.clone(),
            values: sigma,
        }
    }
}

/// Entries of a matrix inverse restricted to a factor's envelope.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    inv_perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl SelectedInverse {
    /// `(A^{-1})_{ij}` in the original ordering, or `None` outside the
    /// envelope.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = (self.inv_perm[i], self.inv_perm[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        (c >= self.first[r]).then(|| self.values[self.offset[r] + (c - self.first[r])])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.inv_perm.len())
            .map(|i| {
                let k = self.inv_perm[i];
                self.values[self.offset[k] + (k - self.first[k])]
            })
            .collect()
    }
}
