//! Gaussian Markov random fields on areal graphs.
//!
//! Three precision structures are built here:
//!
//! * **Leroux**: `(1 - λ) I + λ (D - W)`, mixing independent noise (λ = 0)
//!   with the intrinsic CAR structure (λ = 1).
//! * **Congdon**: the Leroux structure with a per-area scale `κ_i`. Diagonal
//!   entries are `κ_i (1 - λ + λ d_i)` and the entry for neighbours `i ~ j` is
//!   `-λ κ_i κ_j`. With `κ = 1` it is exactly the Leroux matrix.
//! * **Scaled PCAR**: `h_ρ (D - ρ W)`, where `h_ρ` is the geometric mean of
//!   the diagonal of `(D - ρ W)^{-1}`, so the scaled field has marginal
//!   variances whose geometric mean is one.
//!
//! Densities and draws use the precision scaled by `1 / σ²`.

mod cholesky;
mod sparse;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use cholesky::{rcm_ordering, CholeskyFactor, SelectedInverse};
pub use sparse::SymmetricSparse;

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::panel::AreaTime;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Default size cap for computing `h_ρ` from an exact inverse diagonal.
pub const DEFAULT_DENSE_INVERSE_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecisionKind {
    Leroux,
    Congdon,
    ScaledPcar,
}

/// A sparse symmetric precision matrix whose pattern is the diagonal plus the
/// edges of its generating graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix {
    kind: PrecisionKind,
    matrix: SymmetricSparse,
}

impl PrecisionMatrix {
    pub fn kind(&self) -> PrecisionKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn sparse(&self) -> &SymmetricSparse {
        &self.matrix
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.matrix.to_dense()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.matrix.quad_form(x)
    }

    pub fn cholesky(&self) -> Result<CholeskyFactor> {
        CholeskyFactor::new(&self.matrix)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_ok()
    }
}

fn check_unit_interval(name: &'static str, value: f64, upper_open: bool) -> Result<()> {
    let ok = if upper_open {
        (0.0..1.0).contains(&value)
    } else {
        (0.0..=1.0).contains(&value)
    };
    if ok {
        Ok(())
    } else {
        Err(Error::ParameterOutOfRange {
            name,
            value,
            range: if upper_open { "[0, 1)" } else { "[0, 1]" },
        })
    }
}

/// `(1 - λ) I + λ (D - W)`.
///
/// ```
/// use heavyrush::{gmrf, graph::SpatialGraph};
///
/// let g = SpatialGraph::path(3).unwrap();
/// let q = gmrf::build_leroux_precision(&g, 0.5).unwrap();
/// assert_eq!(q.get(1, 1), 1.5);
/// assert_eq!(q.get(0, 1), -0.5);
/// assert_eq!(q.get(0, 2), 0.0);
/// ```
pub fn build_leroux_precision(g: &SpatialGraph, lambda: f64) -> Result<PrecisionMatrix> {
    check_unit_interval("lambda", lambda, false)?;
    let matrix = SymmetricSparse::from_graph(
        g,
        |i| (1.0 - lambda) + lambda * g.degree(i) as f64,
        |_, _| -lambda,
    );
    Ok(PrecisionMatrix {
        kind: PrecisionKind::Leroux,
        matrix,
    })
}

/// Leroux precision with per-area scales `κ`.
///
/// Positive definiteness is not guaranteed for `κ` far from one; call
/// [`PrecisionMatrix::cholesky`] or [`PrecisionMatrix::is_positive_definite`]
/// before treating the result as a proper precision.
pub fn build_congdon_precision(
    g: &SpatialGraph,
    lambda: f64,
    kappa: &[f64],
) -> Result<PrecisionMatrix> {
    check_unit_interval("lambda", lambda, false)?;
    if kappa.len() != g.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} kappa values for {} areas",
            kappa.len(),
            g.n()
        )));
    }
    if let Some((index, &value)) = kappa.iter().enumerate().find(|(_, &k)| !(k > 0.0)) {
        return Err(Error::NonPositiveKappa { index, value });
    }
    let matrix = SymmetricSparse::from_graph(
        g,
        |i| kappa[i] * ((1.0 - lambda) + lambda * g.degree(i) as f64),
        |i, j| -lambda * kappa[i] * kappa[j],
    );
    Ok(PrecisionMatrix {
        kind: PrecisionKind::Congdon,
        matrix,
    })
}

/// Scaled proper CAR precision together with its scaling constant.
#[derive(Debug, Clone)]
pub struct ScaledPcar {
    pub precision: PrecisionMatrix,
    pub scale: f64,
}

/// `h_ρ (D - ρ W)` with `h_ρ = exp(mean_i ln[(D - ρ W)^{-1}]_{ii})`.
pub fn build_scaled_pcar_precision(g: &SpatialGraph, rho: f64) -> Result<ScaledPcar> {
    build_scaled_pcar_precision_capped(g, rho, DEFAULT_DENSE_INVERSE_CAP)
}

/// As [`build_scaled_pcar_precision`] with an explicit cap on `n` for the
/// exact inverse diagonal.
pub fn build_scaled_pcar_precision_capped(
    g: &SpatialGraph,
    rho: f64,
    cap: usize,
) -> Result<ScaledPcar> {
    check_unit_interval("rho", rho, true)?;
    if let Some(i) = g.first_isolated() {
        return Err(Error::IsolatedArea(i));
    }
    if g.n() > cap {
        return Err(Error::TooLargeForDenseInverse { n: g.n(), cap });
    }
    let mut matrix =
        SymmetricSparse::from_graph(g, |i| g.degree(i) as f64, |_, _| -rho);
    let inverse_diag = CholeskyFactor::new(&matrix)?.selected_inverse().diagonal();
    let n = g.n() as f64;
    let scale = (inverse_diag.iter().map(|v| v.ln()).sum::<f64>() / n).exp();
    matrix.scale(scale);
    Ok(ScaledPcar {
        precision: PrecisionMatrix {
            kind: PrecisionKind::ScaledPcar,
            matrix,
        },
        scale,
    })
}

fn check_len(what: &str, got: usize, n: usize) -> Result<()> {
    if got == n {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what} has length {got}, expected {n}"
        )))
    }
}

/// Log-density of `N(mean, σ² P^{-1})` at `x`.
pub fn gmrf_log_density(x: &[f64], mean: &[f64], p: &PrecisionMatrix, sigma: f64) -> Result<f64> {
    let factor = p.cholesky()?;
    log_density_factored(x, mean, p, &factor, sigma)
}

/// As [`gmrf_log_density`] with a factor computed by the caller, so one
/// factorization can serve several evaluations.
pub fn log_density_factored(
    x: &[f64],
    mean: &[f64],
    p: &PrecisionMatrix,
    factor: &CholeskyFactor,
    sigma: f64,
) -> Result<f64> {
    let n = p.n();
    check_len("x", x.len(), n)?;
    check_len("mean", mean.len(), n)?;
    let centred: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let n = n as f64;
    let log_det = factor.log_det() - 2.0 * n * sigma.ln();
    Ok(0.5 * log_det - 0.5 * n * LN_2PI - 0.5 * p.quad_form(&centred) / (sigma * sigma))
}

/// Exact draw from `N(mean, σ² P^{-1})`.
pub fn sample_gmrf<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &[f64],
    p: &PrecisionMatrix,
    sigma: f64,
) -> Result<Vec<f64>> {
    let factor = p.cholesky()?;
    check_len("mean", mean.len(), p.n())?;
    Ok(sample_factored(rng, mean, &factor, sigma))
}

/// Draw using a precomputed factor: `mean + σ L^{-T} z`.
pub fn sample_factored<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &[f64],
    factor: &CholeskyFactor,
    sigma: f64,
) -> Vec<f64> {
    let z: Vec<f64> = (0..factor.n()).map(|_| rng.sample(StandardNormal)).collect();
    factor
        .whiten_inverse(&z)
        .into_iter()
        .zip(mean)
        .map(|(v, m)| m + sigma * v)
        .collect()
}

/// Full conditional mean and variance of `b_{it}` given every other latent
/// effect, under the autoregressive Congdon field.
///
/// For `t >= 1` the mean is
/// `α b_{i,t-1} + λ / (1 - λ + λ d_i) Σ_{j~i} κ_j (b_{jt} - α b_{j,t-1})`
/// and the variance `σ² / (κ_i (1 - λ + λ d_i))`. At `t = 0` the `α` terms
/// drop out. Time indices are 0-based.
#[allow(clippy::too_many_arguments)]
pub fn conditional_moments_congdon(
    i: usize,
    t: usize,
    b: &AreaTime<f64>,
    alpha: f64,
    lambda: f64,
    sigma: f64,
    kappa: &[f64],
    g: &SpatialGraph,
) -> Result<(f64, f64)> {
    let n = g.n();
    check_len("kappa", kappa.len(), n)?;
    check_len("latent panel", b.n_areas(), n)?;
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    if t >= b.n_times() {
        return Err(Error::IndexOutOfRange {
            index: t,
            n: b.n_times(),
        });
    }
    let lag = |j: usize| if t == 0 { 0.0 } else { alpha * b[(j, t - 1)] };
    let denom = (1.0 - lambda) + lambda * g.degree(i) as f64;
    let spatial: f64 = g
        .neighbors(i)
        .iter()
        .map(|&j| kappa[j] * (b[(j, t)] - lag(j)))
        .sum();
    let mean = lag(i) + lambda / denom * spatial;
    let variance = sigma * sigma / (kappa[i] * denom);
    Ok((mean, variance))
}

#[cfg(test)]
mod tests;
