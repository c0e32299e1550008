use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::{digamma, ln_gamma};

use super::{
    softplus, Dataset, KappaPrior, ModelSpec, ParameterLayout, ParameterState,
};
use crate::error::{Error, Result};
use crate::gmrf::{self, PrecisionMatrix};
use crate::graph::SpatialGraph;
use crate::panel::AreaTime;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const LN_2: f64 = std::f64::consts::LN_2;

/// Precomputed log-PCAR prior pieces; fixed for a given graph and `ρ`.
#[derive(Debug, Clone)]
struct PcarPrior {
    precision: PrecisionMatrix,
    log_det: f64,
}

/// The log-posterior of one model on one dataset, over the unconstrained
/// parameterization, with its gradient.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    data: &'a Dataset,
    graph: &'a SpatialGraph,
    spec: ModelSpec,
    layout: ParameterLayout,
    pcar: Option<PcarPrior>,
}

impl<'a> Posterior<'a> {
    pub fn new(data: &'a Dataset, graph: &'a SpatialGraph, spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        if graph.n() != data.n_areas() {
            return Err(Error::DimensionMismatch(format!(
                "graph has {} areas, data has {}",
                graph.n(),
                data.n_areas()
            )));
        }
        let pcar = if spec.kappa_prior == KappaPrior::LogPcar {
            let scaled = gmrf::build_scaled_pcar_precision(graph, spec.rho)?;
            let log_det = scaled.precision.cholesky()?.log_det();
            Some(PcarPrior {
                precision: scaled.precision,
                log_det,
            })
        } else {
            None
        };
        let layout = ParameterLayout::new(&spec, data.n_areas(), data.n_times(), data.p());
        Ok(Posterior {
            data,
            graph,
            spec,
            layout,
            pcar,
        })
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn graph(&self) -> &SpatialGraph {
        self.graph
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Linear predictor `ln E_i + β₀ + x_i'β + b_it`, time-major.
    fn linear_predictor(&self, state: &ParameterState) -> Vec<f64> {
        let n = self.data.n_areas();
        let rows = &self.data.covariates().rows;
        let base: Vec<f64> = (0..n)
            .map(|i| {
                self.data.offsets()[i].ln()
                    + state.beta0
                    + rows[i].iter().zip(&state.beta).map(|(x, b)| x * b).sum::<f64>()
            })
            .collect();
        state
            .b
            .as_slice()
            .iter()
            .enumerate()
            .map(|(cell, b)| base[cell % n] + b)
            .collect()
    }

    /// Poisson log-pmf of each cell, time-major.
    pub fn pointwise_log_likelihood(&self, state: &ParameterState) -> Vec<f64> {
        let y = self.data.counts().as_slice();
        let lf = self.data.log_factorials();
        self.linear_predictor(state)
            .iter()
            .enumerate()
            .map(|(c, &eta)| y[c] as f64 * eta - eta.exp() - lf[c])
            .collect()
    }

    /// Poisson means `E_i exp(β₀ + x_i'β + b_it)`, time-major.
    pub fn expected_counts(&self, state: &ParameterState) -> Vec<f64> {
        self.linear_predictor(state).into_iter().map(f64::exp).collect()
    }

    pub fn log_likelihood(&self, state: &ParameterState) -> f64 {
        self.pointwise_log_likelihood(state).iter().sum()
    }

    fn latent_precision(&self, state: &ParameterState) -> Result<PrecisionMatrix> {
        match self.spec.kappa_prior {
            KappaPrior::None => gmrf::build_leroux_precision(self.graph, state.lambda),
            _ => gmrf::build_congdon_precision(self.graph, state.lambda, &state.kappa),
        }
    }

    /// Log prior density on the natural scale. `-inf` when the latent
    /// precision is not positive definite.
    pub fn log_prior(&self, state: &ParameterState) -> f64 {
        let Ok(q) = self.latent_precision(state) else {
            return f64::NEG_INFINITY;
        };
        let Ok(factor) = q.cholesky() else {
            return f64::NEG_INFINITY;
        };
        let innovations = innovations(&state.b, state.alpha);
        let quad: f64 = (0..state.b.n_times())
            .map(|t| q.quad_form(innovations.column(t)))
            .sum();
        self.hyperprior(state)
            + self.latent_log_density(state, factor.log_det(), quad)
            + self.sum_to_zero_log_density(state.b.column(0))
    }

    fn latent_log_density(&self, state: &ParameterState, log_det: f64, quad: f64) -> f64 {
        let n = self.layout.n as f64;
        let t = self.layout.t as f64;
        let sigma = state.sigma;
        t * (0.5 * log_det - n * sigma.ln() - 0.5 * n * LN_2PI) - 0.5 * quad / (sigma * sigma)
    }

    fn sum_to_zero_sd(&self) -> f64 {
        self.spec.sum_to_zero_scale * self.layout.n as f64
    }

    fn sum_to_zero_log_density(&self, first: &[f64]) -> f64 {
        let sd = self.sum_to_zero_sd();
        let s: f64 = first.iter().sum();
        normal_log_pdf(s, sd)
    }

    /// Priors on everything except the latent field.
    fn hyperprior(&self, state: &ParameterState) -> f64 {
        let spec = &self.spec;
        let mut lp = normal_log_pdf(state.beta0, spec.beta0_sd);
        lp += state.beta.iter().map(|&b| normal_log_pdf(b, spec.beta_sd)).sum::<f64>();
        lp += LN_2 + normal_log_pdf(state.sigma, spec.sigma_scale);
        if self.layout.atanh_alpha().is_some() {
            lp -= LN_2;
        }
        if let Some(nu) = state.nu {
            lp += spec.nu_rate.ln() - spec.nu_rate * nu;
            match spec.kappa_prior {
                KappaPrior::IndependentGamma => {
                    let h = 0.5 * nu;
                    let c = h * h.ln() - ln_gamma(h);
                    lp += state
                        .kappa
                        .iter()
                        .map(|&k| c + (h - 1.0) * k.ln() - h * k)
                        .sum::<f64>();
                }
                KappaPrior::LogPcar => {
                    let pcar = self.pcar.as_ref().expect("pcar prior precomputed");
                    let z = state.z.as_ref().expect("log-PCAR state carries z");
                    let n = self.layout.n as f64;
                    lp += 0.5 * pcar.log_det
                        - 0.5 * n * nu.ln()
                        - 0.5 * n * LN_2PI
                        - 0.5 * pcar.precision.quad_form(z) / nu;
                }
                KappaPrior::None => {}
            }
        }
        lp
    }

    /// Sum of the log-Jacobians of the unconstraining transforms.
    pub(crate) fn log_jacobian(&self, u: &[f64]) -> f64 {
        let l = &self.layout;
        let mut lj = u[l.log_sigma()];
        let x = u[l.logit_lambda()];
        lj += x - 2.0 * softplus(x);
        if let Some(k) = l.atanh_alpha() {
            // ln(1 - tanh²a) = 2 ln 2 - 2 |a| - 2 ln(1 + e^{-2|a|})
            let a = u[k].abs();
            lj += 2.0 * LN_2 - 2.0 * a - 2.0 * (-2.0 * a).exp().ln_1p();
        }
        if let Some(k) = l.log_nu() {
            lj += u[k];
        }
        if let (KappaPrior::IndependentGamma, Some(r)) = (l.kappa_prior, l.kappa()) {
            lj += u[r].iter().sum::<f64>();
        }
        lj
    }

    /// Log-posterior at an unconstrained point (up to the data's marginal
    /// likelihood). `-inf` when the latent precision is not positive definite.
    pub fn log_density(&self, u: &[f64]) -> f64 {
        let Ok(state) = self.layout.constrain(u) else {
            return f64::NEG_INFINITY;
        };
        let lp = self.log_likelihood(&state) + self.log_prior(&state) + self.log_jacobian(u);
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    pub fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.dim()];
        let lp = self.log_density_and_gradient(u, &mut grad);
        if lp.is_finite() {
            Ok(grad)
        } else {
            Err(Error::GradientUnavailable)
        }
    }

    /// Log-posterior and its gradient. The gradient buffer is left zeroed
    /// when the density is not finite.
    pub fn log_density_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let Ok(state) = self.layout.constrain(u) else {
            return f64::NEG_INFINITY;
        };
        let Ok(q) = self.latent_precision(&state) else {
            return f64::NEG_INFINITY;
        };
        let Ok(factor) = q.cholesky() else {
            return f64::NEG_INFINITY;
        };
        let layout = &self.layout;
        let spec = &self.spec;
        let (n, t_len) = (layout.n, layout.t);
        let g = self.graph;
        let sigma = state.sigma;
        let s2 = sigma * sigma;
        let lambda = state.lambda;
        let alpha = state.alpha;
        let kappa = &state.kappa;

        // Likelihood.
        let eta = self.linear_predictor(&state);
        let y = self.data.counts().as_slice();
        let lf = self.data.log_factorials();
        let mut ll = 0.0;
        let mut resid = vec![0.0; n * t_len];
        for c in 0..n * t_len {
            let mu = eta[c].exp();
            ll += y[c] as f64 * eta[c] - mu - lf[c];
            resid[c] = y[c] as f64 - mu;
        }
        let rows = &self.data.covariates().rows;
        grad[layout.beta0()] = resid.iter().sum::<f64>() - state.beta0 / spec.beta0_sd.powi(2);
        for (j, k) in layout.beta().enumerate() {
            let mut acc = 0.0;
            for (c, r) in resid.iter().enumerate() {
                acc += r * rows[c % n][j];
            }
            grad[k] = acc - state.beta[j] / spec.beta_sd.powi(2);
        }

        // Latent field.
        let e = innovations(&state.b, alpha);
        let mut qe = AreaTime::filled(n, t_len, 0.0);
        let mut quad = 0.0;
        for t in 0..t_len {
            q.sparse().mul_vec_into(e.column(t), qe.column_mut(t));
            quad += e
                .column(t)
                .iter()
                .zip(qe.column(t))
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        let latent_lp = self.latent_log_density(&state, factor.log_det(), quad);
        let stz_sd = self.sum_to_zero_sd();
        let first_sum: f64 = state.b.column(0).iter().sum();
        let stz_lp = normal_log_pdf(first_sum, stz_sd);

        let latent = layout.latent();
        for t in 0..t_len {
            for i in 0..n {
                let mut v = resid[t * n + i] - qe[(i, t)] / s2;
                if t + 1 < t_len {
                    v += alpha * qe[(i, t + 1)] / s2;
                }
                if t == 0 {
                    v -= first_sum / (stz_sd * stz_sd);
                }
                grad[latent.start + t * n + i] = v;
            }
        }

        let d_sigma = -(t_len as f64) * n as f64 / sigma + quad / (s2 * sigma)
            - sigma / spec.sigma_scale.powi(2);
        grad[layout.log_sigma()] = sigma * d_sigma + 1.0;

        if let Some(k) = layout.atanh_alpha() {
            let mut d_alpha = 0.0;
            for t in 1..t_len {
                d_alpha += state
                    .b
                    .column(t - 1)
                    .iter()
                    .zip(qe.column(t))
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            d_alpha /= s2;
            grad[k] = (1.0 - alpha * alpha) * d_alpha - 2.0 * alpha;
        }

        // Derivatives through Q need the inverse on the diagonal and edges.
        let inverse = factor.selected_inverse();
        let half_t = 0.5 * t_len as f64;
        let mut d_lambda_trace = 0.0;
        let mut d_lambda_quad = 0.0;
        for i in 0..n {
            let di = g.degree(i) as f64;
            let gii = inverse.get(i, i).expect("diagonal in envelope");
            d_lambda_trace += gii * kappa[i] * (di - 1.0);
            for &j in g.neighbors(i) {
                let gij = inverse.get(i, j).expect("edge in envelope");
                d_lambda_trace -= gij * kappa[i] * kappa[j];
            }
        }
        for t in 0..t_len {
            let et = e.column(t);
            for i in 0..n {
                let di = g.degree(i) as f64;
                let mut acc = kappa[i] * (di - 1.0) * et[i] * et[i];
                for &j in g.neighbors(i) {
                    acc -= kappa[i] * kappa[j] * et[i] * et[j];
                }
                d_lambda_quad += acc;
            }
        }
        let d_lambda = half_t * d_lambda_trace - 0.5 * d_lambda_quad / s2;
        grad[layout.logit_lambda()] = lambda * (1.0 - lambda) * d_lambda + (1.0 - 2.0 * lambda);

        let hyper_lp = self.hyperprior(&state);
        if let (Some(range), Some(k_nu)) = (layout.kappa(), layout.log_nu()) {
            let nu = state.nu.expect("nu present");
            // d/dκ_k of the latent log-density.
            let mut d_kappa = vec![0.0; n];
            for (k, dk) in d_kappa.iter_mut().enumerate() {
                let ck = (1.0 - lambda) + lambda * g.degree(k) as f64;
                let mut trace = inverse.get(k, k).expect("diagonal") * ck;
                for &j in g.neighbors(k) {
                    trace -= 2.0 * lambda * inverse.get(k, j).expect("edge") * kappa[j];
                }
                let mut quad_k = 0.0;
                for t in 0..t_len {
                    let et = e.column(t);
                    let neighbour_sum: f64 = g.neighbors(k).iter().map(|&j| kappa[j] * et[j]).sum();
                    quad_k += ck * et[k] * et[k] - 2.0 * lambda * et[k] * neighbour_sum;
                }
                *dk = half_t * trace - 0.5 * quad_k / s2;
            }
            match spec.kappa_prior {
                KappaPrior::IndependentGamma => {
                    let h = 0.5 * nu;
                    let mut d_nu = -spec.nu_rate;
                    for (k, idx) in range.enumerate() {
                        let kk = kappa[k];
                        let d_prior = (h - 1.0) / kk - h;
                        grad[idx] = kk * (d_kappa[k] + d_prior) + 1.0;
                        d_nu += 0.5 * (h.ln() + 1.0 - digamma(h) + kk.ln() - kk);
                    }
                    grad[k_nu] = nu * d_nu + 1.0;
                }
                KappaPrior::LogPcar => {
                    let pcar = self.pcar.as_ref().expect("pcar prior precomputed");
                    let z = state.z.as_ref().expect("z present");
                    let qz = pcar.precision.mul_vec(z);
                    let zqz: f64 = z.iter().zip(&qz).map(|(a, b)| a * b).sum();
                    let mut d_nu = -spec.nu_rate - 0.5 * n as f64 / nu + 0.5 * zqz / (nu * nu);
                    for (k, idx) in range.enumerate() {
                        grad[idx] = kappa[k] * d_kappa[k] - qz[k] / nu;
                        d_nu -= 0.5 * kappa[k] * d_kappa[k];
                    }
                    grad[k_nu] = nu * d_nu + 1.0;
                }
                KappaPrior::None => unreachable!(),
            }
        }

        let lp = ll + latent_lp + stz_lp + hyper_lp + self.log_jacobian(u);
        if lp.is_finite() {
            lp
        } else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            f64::NEG_INFINITY
        }
    }

    /// Starting point near the prior bulk: `β₀, β ~ N(0, 0.1²)`,
    /// `b ~ N(0, 0.01²)`, `σ = 0.1`, `λ = 0.5`, `α = 0.5`, `κ = 1` and `ν` at
    /// its prior mean.
    pub fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let l = &self.layout;
        let mut u = vec![0.0; l.dim()];
        u[l.beta0()] = 0.1 * rng.sample::<f64, _>(StandardNormal);
        for k in l.beta() {
            u[k] = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        u[l.log_sigma()] = 0.1f64.ln();
        u[l.logit_lambda()] = 0.0;
        if let Some(k) = l.atanh_alpha() {
            u[k] = 0.5f64.atanh();
        }
        if let (Some(range), Some(k_nu)) = (l.kappa(), l.log_nu()) {
            let nu = 1.0 / self.spec.nu_rate;
            u[k_nu] = nu.ln();
            let fill = match self.spec.kappa_prior {
                KappaPrior::LogPcar => 0.5 * nu,
                _ => 0.0,
            };
            u[range].iter_mut().for_each(|v| *v = fill);
        }
        for k in l.latent() {
            u[k] = 0.01 * rng.sample::<f64, _>(StandardNormal);
        }
        u
    }
}

/// `e_1 = b_1`, `e_t = b_t - α b_{t-1}`.
fn innovations(b: &AreaTime<f64>, alpha: f64) -> AreaTime<f64> {
    let mut e = b.clone();
    for t in (1..b.n_times()).rev() {
        let (prev, cur) = (b.column(t - 1), e.column_mut(t));
        for (c, p) in cur.iter_mut().zip(prev) {
            *c -= alpha * p;
        }
    }
    e
}

fn normal_log_pdf(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * (x / sd).powi(2)
}

/// Poisson log-likelihood of `state` on `data`.
pub fn log_likelihood(state: &ParameterState, data: &Dataset, graph: &SpatialGraph, spec: &ModelSpec) -> Result<f64> {
    Ok(Posterior::new(data, graph, spec.clone())?.log_likelihood(state))
}

/// Log prior of `state`; `-inf` if the latent precision is not positive
/// definite.
pub fn log_prior(state: &ParameterState, data: &Dataset, graph: &SpatialGraph, spec: &ModelSpec) -> Result<f64> {
    Ok(Posterior::new(data, graph, spec.clone())?.log_prior(state))
}

pub fn log_posterior(u: &[f64], data: &Dataset, graph: &SpatialGraph, spec: &ModelSpec) -> Result<f64> {
    Ok(Posterior::new(data, graph, spec.clone())?.log_density(u))
}

pub fn grad_log_posterior(u: &[f64], data: &Dataset, graph: &SpatialGraph, spec: &ModelSpec) -> Result<Vec<f64>> {
    Posterior::new(data, graph, spec.clone())?.gradient(u)
}
