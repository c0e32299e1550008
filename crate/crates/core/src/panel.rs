use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n x T` panel of per-area, per-time values.
///
/// Storage is time-major: all areas at `t = 0`, then all areas at `t = 1`,
/// and so on. This is the order latent effects take inside the flat
/// parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaTime<T> {
    n_areas: usize,
    n_times: usize,
    data: Vec<T>,
}

impl<T: Clone> AreaTime<T> {
    pub fn filled(n_areas: usize, n_times: usize, value: T) -> Self {
        AreaTime {
            n_areas,
            n_times,
            data: vec![value; n_areas * n_times],
        }
    }

    /// Wraps a time-major buffer.
    pub fn from_time_major(n_areas: usize, n_times: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n_areas * n_times {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {n_areas} x {n_times} panel",
                data.len()
            )));
        }
        Ok(AreaTime {
            n_areas,
            n_times,
            data,
        })
    }

    /// Builds from one row per area (`rows[i][t]`).
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n_areas = rows.len();
        let n_times = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_times) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(n_areas * n_times);
        for t in 0..n_times {
            for row in rows {
                data.push(row[t].clone());
            }
        }
        Ok(AreaTime {
            n_areas,
            n_times,
            data,
        })
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.n_areas)
            .map(|i| (0..self.n_times).map(|t| self[(i, t)].clone()).collect())
            .collect()
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> AreaTime<U> {
        AreaTime {
            n_areas: self.n_areas,
            n_times: self.n_times,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T> AreaTime<T> {
    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// All areas at time `t`.
    pub fn column(&self, t: usize) -> &[T] {
        &self.data[t * self.n_areas..(t + 1) * self.n_areas]
    }

    pub fn column_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.data[t * self.n_areas..(t + 1) * self.n_areas]
    }
}

impl<T> std::ops::Index<(usize, usize)> for AreaTime<T> {
    type Output = T;

    fn index(&self, (i, t): (usize, usize)) -> &T {
        debug_assert!(i < self.n_areas && t < self.n_times);
        &self.data[t * self.n_areas + i]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for AreaTime<T> {
    fn index_mut(&mut self, (i, t): (usize, usize)) -> &mut T {
        debug_assert!(i < self.n_areas && t < self.n_times);
        &mut self.data[t * self.n_areas + i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_major_layout() {
        let p = AreaTime::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(p.as_slice(), &[1, 3, 2, 4]);
        assert_eq!(p[(1, 0)], 3);
        assert_eq!(p.column(1), &[2, 4]);
        assert_eq!(p.rows(), vec![vec![1, 2], vec![3, 4]]);
    }
}
