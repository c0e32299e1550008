//! Areal adjacency structure.
//!
//! Areas are indexed `0..n`. Two areas are neighbours when they share a
//! border; weights are binary and symmetric. The graph is the only spatial
//! input to every precision matrix in the crate.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Binary, symmetric adjacency over `n` areas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialGraph {
    n: usize,
    /// Unordered edges stored once as `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbour lists.
    neighbors: Vec<Vec<usize>>,
}

impl SpatialGraph {
    /// Builds a graph from an edge list.
    ///
    /// Reversed and repeated pairs are merged. Self-loops and indices outside
    /// `0..n` are rejected.
    ///
    /// ```
    /// use heavyrush::graph::SpatialGraph;
    ///
    /// let g = SpatialGraph::new(3, [(0, 1), (1, 0), (1, 2)]).unwrap();
    /// assert_eq!(g.degrees(), vec![1, 2, 1]);
    /// assert_eq!(g.num_edges(), 2);
    /// ```
    pub fn new<I>(n: usize, edge_list: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut set = BTreeSet::new();
        for (i, j) in edge_list {
            for index in [i, j] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(SpatialGraph {
            n,
            edges,
            neighbors,
        })
    }

    /// Cycle graph `0 - 1 - ... - (n-1) - 0`. Needs `n >= 3`.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::DimensionMismatch(format!(
                "a ring needs at least 3 areas, got {n}"
            )));
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Index of the first area without neighbours, if any.
    pub fn first_isolated(&self) -> Option<usize> {
        self.neighbors.iter().position(Vec::is_empty)
    }

    /// Dense `n x n` 0/1 weight matrix, row-major.
    pub fn dense_weights(&self) -> Vec<Vec<f64>> {
        let mut w = vec![vec![0.0; self.n]; self.n];
        for &(i, j) in &self.edges {
            w[i][j] = 1.0;
            w[j][i] = 1.0;
        }
        w
    }

    /// Applies a relabelling `new_index = perm[old_index]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} for {} areas",
                perm.len(),
                self.n
            )));
        }
        Self::new(self.n, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))
    }
}
