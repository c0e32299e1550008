// NaN must fail validity checks, so `!(x > 0.0)` is deliberate; indexed
// loops mirror the matrix algorithms they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod gmrf;
pub mod graph;
pub mod model;
pub mod panel;
pub mod rng;
pub mod sampler;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};

// The guide's code blocks compile and run as doctests of this crate, one
// module per chapter so a failure points at its source file.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/precision.md")]
    mod precision {}
    #[doc = include_str!("../../../book/src/latent-fields.md")]
    mod latent_fields {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/outliers.md")]
    mod outliers {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
