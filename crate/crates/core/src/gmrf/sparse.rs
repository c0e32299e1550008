use crate::graph::SpatialGraph;

/// Symmetric matrix with an explicit diagonal and an off-diagonal pattern
/// taken from a graph. Both triangles are stored, row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSparse {
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymmetricSparse {
    /// Builds the matrix with `diag(i)` on the diagonal and `off(i, j)` for
    /// every neighbouring pair. `off` must be symmetric in its arguments.
    pub fn from_graph<D, O>(g: &SpatialGraph, diag: D, off: O) -> Self
    where
        D: Fn(usize) -> f64,
        O: Fn(usize, usize) -> f64,
    {
        let n = g.n();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(2 * g.num_edges());
        let mut vals = Vec::with_capacity(2 * g.num_edges());
        row_ptr.push(0);
        for i in 0..n {
            for &j in g.neighbors(i) {
                cols.push(j);
                vals.push(off(i, j));
            }
            row_ptr.push(cols.len());
        }
        SymmetricSparse {
            diag: (0..n).map(diag).collect(),
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal `(column, value)` pairs of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.diag.iter_mut().for_each(|d| *d *= factor);
        self.vals.iter_mut().for_each(|v| *v *= factor);
    }

    /// `out = A x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.diag[i] * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `x' A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n() {
            let mut row = self.diag[i] * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.vals[k] * x[self.cols[k]];
            }
            acc += x[i] * row;
        }
        acc
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut out = vec![vec![0.0; n]; n];
        for (i, row) in out.iter_mut().enumerate() {
            row[i] = self.diag[i];
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }
}
