//! Static-path Hamiltonian Monte Carlo.
//!
//! Each iteration draws a Gaussian momentum, runs a fixed number of leapfrog
//! steps and accepts or rejects the endpoint with a Metropolis test. During
//! burn-in the step size is tuned by dual averaging towards a target mean
//! acceptance probability; afterwards it is frozen at the averaged value.
//!
//! Chains are independent. Chain `k` draws every random number from the stream
//! `SeedTree::new(seed).child("chain", k)`, so running chains on a thread pool
//! of any size gives the same output as running them one after another.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Posterior;
use crate::rng::{SeedTree, StreamRng};


/// Energy errors above this magnitude count as divergent transitions.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Number of fresh starting points tried before a chain gives up.
pub const MAX_INIT_ATTEMPTS: usize = 100;

/// A differentiable log-density on `R^d`.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log-density, which may
    /// be `-inf` outside the support. The gradient is ignored in that case.
    fn log_density_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64;

    /// A random starting point. Defaults to `U(-2, 2)` in every coordinate.
    fn initial_point(&self, rng: &mut StreamRng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()
    }
}

impl Target for Posterior<'_> {
    fn dim(&self) -> usize {
        Posterior::dim(self)
    }

    fn log_density_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        Posterior::log_density_and_gradient(self, u, grad)
    }

    fn initial_point(&self, rng: &mut StreamRng) -> Vec<f64> {
        Posterior::initial_point(self, rng)
    }
}

/// Run lengths and tuning constants shared by all chains of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub leapfrog_steps: usize,
    pub target_accept: f64,
    /// Skip adaptation and use this step size throughout.
    pub step_size: Option<f64>,
    /// Each iteration scales the step size by a factor drawn from
    /// `U(1 - j, 1 + j)`, which breaks the periodicity of a fixed path length.
    pub step_jitter: f64,
    /// Estimate a diagonal mass matrix from burn-in draws. Off means a unit
    /// mass matrix. On by default: with a unit mass the intercept and the
    /// latent field move on scales two orders of magnitude apart.
    pub adapt_mass: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 5000,
            burn_in: 2500,
            thin: 5,
            chains: 2,
            seed: 0,
            leapfrog_steps: 32,
            target_accept: 0.8,
            step_size: None,
            step_jitter: 0.1,
            adapt_mass: true,
        }
    }
}

impl ChainConfig {
    /// Draws kept per chain.
    pub fn retained(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            ));
        }
        if self.thin == 0 {
            return bad("thin must be positive".into());
        }
        if self.retained() < 50 {
            return bad(format!(
                "only {} retained draws per chain, need at least 50",
                self.retained()
            ));
        }
        if self.chains == 0 {
            return bad("chains must be positive".into());
        }
        if self.leapfrog_steps == 0 {
            return bad("leapfrog steps must be positive".into());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!("target acceptance {} not in (0, 1)", self.target_accept));
        }
        if let Some(eps) = self.step_size {
            if !(eps.is_finite() && eps > 0.0) {
                return bad(format!("step size {eps} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return bad(format!("step jitter {} not in [0, 1)", self.step_jitter));
        }
        Ok(())
    }
}

/// Everything one chain produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub chain: usize,
    /// Retained unconstrained draws, after burn-in and thinning.
    pub draws: Vec<Vec<f64>>,
    /// Log-density at each retained draw.
    pub log_density: Vec<f64>,
    /// Acceptance probability of every iteration, burn-in included.
    pub acceptance: Vec<f64>,
    /// Step size used at every iteration, before jitter.
    pub step_size_trace: Vec<f64>,
    /// Step size frozen at the end of burn-in.
    pub step_size: f64,
    /// Energy error `H(end) - H(start)` of every post-burn-in iteration.
    pub energy_error: Vec<f64>,
    /// Divergent transitions after burn-in.
    pub divergences: usize,
    pub warmup_divergences: usize,
    /// Diagonal of the inverse mass matrix used after burn-in.
    pub inverse_mass: Vec<f64>,
}

impl ChainOutput {
    /// Mean acceptance probability after burn-in.
    pub fn mean_acceptance(&self) -> f64 {
        let post = &self.acceptance[self.acceptance.len() - self.energy_error.len()..];
        post.iter().sum::<f64>() / post.len().max(1) as f64
    }
}

/// Nesterov dual averaging of the log step size.
#[derive(Debug, Clone)]
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            target,
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: 0.0,
            count: 0.0,
        }
    }

    fn update(&mut self, accept: f64) {
        self.count += 1.0;
        let m = self.count;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_eps = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn averaged(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    /// Variance shrunk towards `1e-3`, as a regularized inverse mass.
    fn regularized(&self) -> Vec<f64> {
        let n = self.n as f64;
        let w = n / (n + 5.0);
        self.m2
            .iter()
            .map(|s| w * s / (n - 1.0) + 1e-3 * (1.0 - w))
            .collect()
    }
}

/// Burn-in iterations at which the mass matrix is re-estimated: an initial
/// fast window of 75, slow windows doubling from 25, and a final fast window
/// of 50, as in Stan. Empty when burn-in is too short for the scheme.
fn mass_windows(burn_in: usize) -> Vec<usize> {
    const INIT: usize = 75;
    const TERM: usize = 50;
    const BASE: usize = 25;
    if burn_in < INIT + TERM + BASE {
        return Vec::new();
    }
    let last = burn_in - TERM;
    let mut ends = Vec::new();
    let mut start = INIT;
    let mut size = BASE;
    while start < last {
        let mut end = start + size;
        // Fold a short remainder into the current window.
        if end + 2 * size > last {
            end = last;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    ends
}

struct State {
    q: Vec<f64>,
    grad: Vec<f64>,
    lp: f64,
}

struct Leapfrog<'t, T: Target + ?Sized> {
    target: &'t T,
    inv_mass: Vec<f64>,
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
}

impl<T: Target + ?Sized> Leapfrog<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
    }

    /// Integrates from `start` with momentum `self.p`; returns the endpoint
    /// log-density, or `-inf` if the path left the support.
    fn run(&mut self, start: &State, eps: f64, steps: usize) -> f64 {
        self.q.copy_from_slice(&start.q);
        self.grad.copy_from_slice(&start.grad);
        let mut lp = start.lp;
        for _ in 0..steps {
            for (p, g) in self.p.iter_mut().zip(&self.grad) {
                *p += 0.5 * eps * g;
            }
            for ((q, p), m) in self.q.iter_mut().zip(&self.p).zip(&self.inv_mass) {
                *q += eps * m * p;
            }
            lp = self.target.log_density_and_gradient(&self.q, &mut self.grad);
            if !lp.is_finite() {
                return f64::NEG_INFINITY;
            }
            for (p, g) in self.p.iter_mut().zip(&self.grad) {
                *p += 0.5 * eps * g;
            }
        }
        lp
    }

    fn draw_momentum(&mut self, rng: &mut StreamRng) {
        for (p, m) in self.p.iter_mut().zip(&self.inv_mass) {
            let z: f64 = rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
    }
}

/// Outcome of a single HMC transition.
struct Transition {
    accept_prob: f64,
    energy_error: f64,
    divergent: bool,
}

fn transition<T: Target + ?Sized>(
    lf: &mut Leapfrog<'_, T>,
    state: &mut State,
    eps: f64,
    steps: usize,
    rng: &mut StreamRng,
) -> Transition {
    lf.draw_momentum(rng);
    let h0 = -state.lp + lf.kinetic(&lf.p);
    let lp1 = lf.run(state, eps, steps);
    let h1 = -lp1 + lf.kinetic(&lf.p);
    let energy_error = h1 - h0;
    let divergent = !energy_error.is_finite() || energy_error.abs() > DIVERGENCE_THRESHOLD;
    let accept_prob = if energy_error.is_nan() {
        0.0
    } else {
        (-energy_error).exp().min(1.0)
    };
    let u: f64 = rng.random();
    if !divergent && u < accept_prob {
        state.q.copy_from_slice(&lf.q);
        state.grad.copy_from_slice(&lf.grad);
        state.lp = lp1;
    }
    Transition {
        accept_prob: if divergent { 0.0 } else { accept_prob },
        energy_error,
        divergent,
    }
}

/// Doubles or halves a unit step until a single leapfrog step crosses an
/// acceptance probability of one half.
fn initial_step_size<T: Target + ?Sized>(
    lf: &mut Leapfrog<'_, T>,
    state: &State,
    rng: &mut StreamRng,
) -> f64 {
    let mut eps = 1.0;
    lf.draw_momentum(rng);
    let p0 = lf.p.clone();
    let h0 = -state.lp + lf.kinetic(&p0);
    let log_accept = |lf: &mut Leapfrog<'_, T>, eps: f64| {
        lf.p.copy_from_slice(&p0);
        let lp = lf.run(state, eps, 1);
        let h = -lp + lf.kinetic(&lf.p);
        let a = h0 - h;
        if a.is_nan() {
            f64::NEG_INFINITY
        } else {
            a
        }
    };
    let direction = if log_accept(lf, eps) > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let a = log_accept(lf, eps);
        if direction * a <= direction * 0.5f64.ln() {
            break;
        }
        eps *= 2f64.powf(direction);
    }
    eps.clamp(1e-8, 1e3)
}

/// Runs one chain from `init`, falling back to the target's own starting
/// points when `init` is absent or has zero density.
pub fn run_chain<T: Target + ?Sized>(
    target: &T,
    cfg: &ChainConfig,
    chain_id: usize,
    init: Option<&[f64]>,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let d = target.dim();
    let mut rng = SeedTree::new(cfg.seed).child("chain", chain_id as u64).rng();

    let mut grad = vec![0.0; d];
    let mut start = None;
    if let Some(u) = init {
        if u.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "initial point of length {} for a {d}-dimensional target",
                u.len()
            )));
        }
        let lp = target.log_density_and_gradient(u, &mut grad);
        if lp.is_finite() {
            start = Some(State {
                q: u.to_vec(),
                grad: grad.clone(),
                lp,
            });
        }
    }
    if start.is_none() {
        for _ in 0..MAX_INIT_ATTEMPTS {
            let q = target.initial_point(&mut rng);
            let lp = target.log_density_and_gradient(&q, &mut grad);
            if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
                start = Some(State {
                    q,
                    grad: grad.clone(),
                    lp,
                });
                break;
            }
        }
    }
    let mut state = start.ok_or(Error::InitializationFailure {
        chain: chain_id,
        attempts: MAX_INIT_ATTEMPTS,
    })?;

    let mut lf = Leapfrog {
        target,
        inv_mass: vec![1.0; d],
        q: vec![0.0; d],
        p: vec![0.0; d],
        grad: vec![0.0; d],
    };
    let steps = cfg.leapfrog_steps;
    let mut eps = match cfg.step_size {
        Some(e) => e,
        None => initial_step_size(&mut lf, &state, &mut rng),
    };
    let mut adapt = DualAveraging::new(eps, cfg.target_accept);
    let windows = if cfg.adapt_mass && cfg.step_size.is_none() {
        mass_windows(cfg.burn_in)
    } else {
        Vec::new()
    };
    let mut next_window = 0;
    let mut welford = Welford::new(d);

    let retained = cfg.retained();
    let mut out = ChainOutput {
        chain: chain_id,
        draws: Vec::with_capacity(retained),
        log_density: Vec::with_capacity(retained),
        acceptance: Vec::with_capacity(cfg.iterations),
        step_size_trace: Vec::with_capacity(cfg.iterations),
        step_size: eps,
        energy_error: Vec::with_capacity(cfg.iterations - cfg.burn_in),
        divergences: 0,
        warmup_divergences: 0,
        inverse_mass: Vec::new(),
    };

    for iter in 0..cfg.iterations {
        let warmup = iter < cfg.burn_in;
        if iter == cfg.burn_in && cfg.step_size.is_none() {
            eps = adapt.averaged();
            out.step_size = eps;
        }
        let jitter = if cfg.step_jitter > 0.0 {
            1.0 + cfg.step_jitter * (2.0 * rng.random::<f64>() - 1.0)
        } else {
            1.0
        };
        let tr = transition(&mut lf, &mut state, eps * jitter, steps, &mut rng);
        out.acceptance.push(tr.accept_prob);
        out.step_size_trace.push(eps);

        if warmup {
            if tr.divergent {
                out.warmup_divergences += 1;
            }
            if cfg.step_size.is_none() {
                adapt.update(tr.accept_prob);
                eps = adapt.current();
            }
            if next_window < windows.len() && iter >= 75 {
                welford.push(&state.q);
                if iter + 1 == windows[next_window] {
                    lf.inv_mass = welford.regularized();
                    welford = Welford::new(d);
                    next_window += 1;
                    // A new metric invalidates the tuned step size.
                    eps = initial_step_size(&mut lf, &state, &mut rng);
                    adapt = DualAveraging::new(eps, cfg.target_accept);
                }
            }
        } else {
            if tr.divergent {
                out.divergences += 1;
            }
            out.energy_error.push(tr.energy_error);
            if (iter - cfg.burn_in + 1).is_multiple_of(cfg.thin) {
                out.draws.push(state.q.clone());
                out.log_density.push(state.lp);
            }
        }
    }
    out.inverse_mass = lf.inv_mass;
    Ok(out)
}

/// Runs `cfg.chains` chains in parallel on the current rayon pool. `inits`
/// may supply a starting point per chain; missing entries fall back to the
/// target's own initialization.
pub fn run_chains<T: Target + ?Sized>(
    target: &T,
    cfg: &ChainConfig,
    inits: &[Vec<f64>],
) -> Result<Vec<ChainOutput>> {
    cfg.validate()?;
    (0..cfg.chains)
        .into_par_iter()
        .map(|k| run_chain(target, cfg, k, inits.get(k).map(Vec::as_slice)))
        .collect()
}

/// Same as [`run_chains`] but on the calling thread only.
pub fn run_chains_sequential<T: Target + ?Sized>(
    target: &T,
    cfg: &ChainConfig,
    inits: &[Vec<f64>],
) -> Result<Vec<ChainOutput>> {
    cfg.validate()?;
    (0..cfg.chains)
        .map(|k| run_chain(target, cfg, k, inits.get(k).map(Vec::as_slice)))
        .collect()
}
