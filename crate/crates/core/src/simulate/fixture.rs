//! A bundled 33-area graph with offsets.
//!
//! The areas sit on a triangulated grid with row lengths 5, 6, 6, 6, 5, 5.
//! Each area borders its right neighbour, the area below it and the area
//! below and to the right, which gives interior degrees of six and a mix of
//! boundary degrees, much like a city's borough map. The graph is synthetic;
//! it is not derived from any cartographic source.
//!
//! The offsets cover all five offset categories.

use crate::error::Result;
use crate::graph::SpatialGraph;

pub const N_AREAS: usize = 33;

/// Row lengths of the grid, top to bottom.
pub const ROWS: [usize; 6] = [5, 6, 6, 6, 5, 5];

#[rustfmt::skip]
pub const OFFSETS: [f64; N_AREAS] = [
    12.4, 31.0, 58.2, 96.5, 161.3,
    20.8, 44.1, 73.9, 121.6, 187.5, 39.2,
    88.4, 15.3, 52.7, 139.8, 66.1, 27.9,
    230.4, 47.5, 101.2, 35.6, 18.9, 115.0,
    62.3, 29.4, 172.8, 81.7, 9.6,
    54.9, 132.5, 24.1, 70.3, 41.8,
];

/// Edge list of the fixture, each pair once with the smaller index first.
pub fn edges() -> Vec<(usize, usize)> {
    let mut starts = [0; ROWS.len()];
    for r in 1..ROWS.len() {
        starts[r] = starts[r - 1] + ROWS[r - 1];
    }
    let mut out = Vec::new();
    for (r, &len) in ROWS.iter().enumerate() {
        for c in 0..len {
            let id = starts[r] + c;
            if c + 1 < len {
                out.push((id, id + 1));
            }
            if let Some(&below) = ROWS.get(r + 1) {
                if c < below {
                    out.push((id, starts[r + 1] + c));
                }
                if c + 1 < below {
                    out.push((id, starts[r + 1] + c + 1));
                }
            }
        }
    }
    out
}

pub fn graph() -> Result<SpatialGraph> {
    SpatialGraph::new(N_AREAS, edges())
}
