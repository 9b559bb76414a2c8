//! Adaptive Hamiltonian Monte Carlo over the model posterior.
//!
//! Plain HMC with a jittered leapfrog step count: each transition draws its
//! step count uniformly from 1..=L where L is set by the adapted step size
//! and a fixed trajectory length. Warmup adapts the step size by dual
//! averaging toward a target acceptance rate and estimates a diagonal mass
//! matrix from second-half warmup draws; both are frozen afterwards.
//!
//! Chains are independent and may run in parallel; each draws from its own
//! RNG substream derived by hashing (seed, chain index), so the output is
//! identical under any thread schedule.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::features::FeatureSet;
use crate::model::{ModelConfig, ModelError, ParamLayout, Posterior};

/// Hamiltonian error (natural-log units) beyond which a trajectory is
/// flagged divergent and rejected.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Nominal trajectory length in adapted time units; the per-transition
/// step count is jittered uniformly below `trajectory_length / step_size`.
const TRAJECTORY_LENGTH: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("chain {chain}: {reason}")]
    Chain { chain: usize, reason: String },
    #[error("draws file: {0}")]
    Format(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub iters: usize,
    pub warmup: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_leapfrog_steps: usize,
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            iters: 2500,
            warmup: 1500,
            seed: 0,
            target_accept: 0.8,
            max_leapfrog_steps: 1024,
            init_radius: 2.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.chains == 0 {
            return Err(SamplerError::Config("chains must be >= 1".to_string()));
        }
        if !(self.warmup > 0 && self.warmup < self.iters) {
            return Err(SamplerError::Config(format!(
                "need 0 < warmup < iters, got warmup {} iters {}",
                self.warmup, self.iters
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(SamplerError::Config("target_accept must be in (0,1)".to_string()));
        }
        if self.max_leapfrog_steps == 0 {
            return Err(SamplerError::Config("max_leapfrog_steps must be >= 1".to_string()));
        }
        if !(self.init_radius > 0.0) {
            return Err(SamplerError::Config("init_radius must be positive".to_string()));
        }
        Ok(())
    }
}

/// A differentiable unnormalized log density.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn logp(&self, x: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.dim()];
        self.logp_and_grad(x, &mut grad)
    }
}

/// Derives a 32-byte RNG key from a base seed and a stream index, so that
/// substreams are independent and schedule-invariant.
pub(crate) fn derive_stream_seed(seed: u64, stream: u64) -> [u8; 32] {
    let mut state = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut next = || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let mut out = [0u8; 32];
    for chunk in out.chunks_mut(8) {
        chunk.copy_from_slice(&next().to_le_bytes());
    }
    out
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_stream_seed(seed, stream))
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(pi, im)| pi * pi * im).sum::<f64>()
}

/// One leapfrog integration step; `logp` and `grad` must hold the values
/// at `x` on entry and hold the values at the new position on exit.
fn leapfrog_step<T: LogDensity + ?Sized>(
    target: &T,
    inv_mass: &[f64],
    x: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    logp: &mut f64,
    step_size: f64,
) {
    let half = 0.5 * step_size;
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi += half * gi;
    }
    for ((xi, pi), im) in x.iter_mut().zip(p.iter()).zip(inv_mass) {
        *xi += step_size * pi * im;
    }
    *logp = target.logp_and_grad(x, grad);
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi += half * gi;
    }
}

/// Integrates `n_steps` leapfrog steps and returns the endpoint state plus
/// the Hamiltonian after every step.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    inv_mass: &[f64],
    x0: &[f64],
    p0: &[f64],
    step_size: f64,
    n_steps: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut x = x0.to_vec();
    let mut p = p0.to_vec();
    let mut grad = vec![0.0; x.len()];
    let mut logp = target.logp_and_grad(&x, &mut grad);
    let mut energies = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        leapfrog_step(target, inv_mass, &mut x, &mut p, &mut grad, &mut logp, step_size);
        energies.push(-logp + kinetic(&p, inv_mass));
    }
    (x, p, energies)
}

/// Outcome of one HMC transition.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub accepted: bool,
    pub accept_prob: f64,
    pub diverged: bool,
    pub n_steps: usize,
}

/// Scratch buffers plus frozen kernel parameters for one chain.
struct HmcKernel {
    inv_mass: Vec<f64>,
    step_size: f64,
    max_steps: usize,
    p: Vec<f64>,
    x_prop: Vec<f64>,
    grad_prop: Vec<f64>,
}

impl HmcKernel {
    fn new(dim: usize, step_size: f64, max_steps: usize) -> Self {
        HmcKernel {
            inv_mass: vec![1.0; dim],
            step_size,
            max_steps,
            p: vec![0.0; dim],
            x_prop: vec![0.0; dim],
            grad_prop: vec![0.0; dim],
        }
    }

    /// Leapfrog step budget for the current step size.
    fn step_budget(&self) -> usize {
        ((TRAJECTORY_LENGTH / self.step_size).ceil() as usize).clamp(1, self.max_steps)
    }

    /// One Metropolis-adjusted HMC transition; `x`, `logp` and `grad` are
    /// updated in place on acceptance.
    fn transition<T: LogDensity + ?Sized>(
        &mut self,
        target: &T,
        rng: &mut ChaCha8Rng,
        x: &mut [f64],
        logp: &mut f64,
        grad: &mut [f64],
    ) -> Transition {
        for (pi, im) in self.p.iter_mut().zip(self.inv_mass.iter()) {
            let z: f64 = rng.sample(StandardNormal);
            *pi = z / im.sqrt();
        }
        let h0 = -*logp + kinetic(&self.p, &self.inv_mass);
        let n_steps = rng.random_range(1..=self.step_budget());

        self.x_prop.copy_from_slice(x);
        self.grad_prop.copy_from_slice(grad);
        let mut logp_prop = *logp;
        let mut diverged = false;
        for _ in 0..n_steps {
            leapfrog_step(
                target,
                &self.inv_mass,
                &mut self.x_prop,
                &mut self.p,
                &mut self.grad_prop,
                &mut logp_prop,
                self.step_size,
            );
            let h = -logp_prop + kinetic(&self.p, &self.inv_mass);
            if !h.is_finite() || h - h0 > DIVERGENCE_THRESHOLD {
                diverged = true;
                break;
            }
        }

        if diverged {
            return Transition {
                accepted: false,
                accept_prob: 0.0,
                diverged: true,
                n_steps,
            };
        }
        let h1 = -logp_prop + kinetic(&self.p, &self.inv_mass);
        let accept_prob = (h0 - h1).exp().min(1.0);
        let accepted = rng.random_range(0.0..1.0) < accept_prob;
        if accepted {
            x.copy_from_slice(&self.x_prop);
            grad.copy_from_slice(&self.grad_prop);
            *logp = logp_prop;
        }
        Transition {
            accepted,
            accept_prob,
            diverged: false,
            n_steps,
        }
    }
}

/// Nesterov dual averaging of the log step size toward a target
/// acceptance rate.
struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    count: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: eps0.ln(),
            h_bar: 0.0,
            count: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_prob: f64) {
        self.count += 1.0;
        let m = self.count;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let k = m.powf(-Self::KAPPA);
        self.log_eps_bar = k * self.log_eps + (1.0 - k) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp().clamp(1e-10, 1e3)
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp().clamp(1e-10, 1e3)
    }
}

/// Doubles/halves the step size until a single leapfrog step crosses 50%
/// acceptance.
fn find_reasonable_step_size<T: LogDensity + ?Sized>(
    target: &T,
    rng: &mut ChaCha8Rng,
    inv_mass: &[f64],
    x: &[f64],
    logp: f64,
) -> f64 {
    let dim = x.len();
    let mut p = vec![0.0; dim];
    for (pi, im) in p.iter_mut().zip(inv_mass.iter()) {
        let z: f64 = rng.sample(StandardNormal);
        *pi = z / im.sqrt();
    }
    let h0 = -logp + kinetic(&p, inv_mass);
    let ratio_at = |eps: f64| -> f64 {
        let (_, _, energies) = leapfrog(target, inv_mass, x, &p, eps, 1);
        let h1 = energies[0];
        if h1.is_finite() {
            (h0 - h1).exp()
        } else {
            0.0
        }
    };
    let mut eps = 1.0;
    let mut ratio = ratio_at(eps);
    let dir: f64 = if ratio > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..60 {
        let crossed = if dir > 0.0 { ratio <= 0.5 } else { ratio >= 0.5 };
        if crossed || !(1e-10..=1e6).contains(&eps) {
            break;
        }
        eps *= 2.0f64.powf(dir);
        ratio = ratio_at(eps);
    }
    eps.clamp(1e-10, 1e3)
}

/// Step size and diagonal mass estimated by warmup.
#[derive(Debug, Clone)]
pub struct AdaptedParams {
    pub step_size: f64,
    /// Inverse mass per coordinate (posterior variance estimates).
    pub inv_mass: Vec<f64>,
}

/// Runs the warmup schedule on one chain: dual-averaging step-size
/// adaptation throughout, with the diagonal mass estimated from draws in
/// the second half of warmup (skipped when warmup < 100). The chain state
/// is advanced in place. Errors if every warmup transition diverged.
pub fn adapt_warmup<T: LogDensity + ?Sized>(
    target: &T,
    rng: &mut ChaCha8Rng,
    x: &mut [f64],
    logp: &mut f64,
    grad: &mut [f64],
    warmup: usize,
    target_accept: f64,
    max_leapfrog_steps: usize,
) -> Result<AdaptedParams, String> {
    let dim = x.len();
    let mut kernel = HmcKernel::new(dim, 1.0, max_leapfrog_steps);
    kernel.step_size = find_reasonable_step_size(target, rng, &kernel.inv_mass, x, *logp);
    let mut da = DualAveraging::new(kernel.step_size, target_accept);

    let (mass_start, mass_end) = if warmup >= 100 {
        (warmup / 2, warmup * 9 / 10)
    } else {
        (warmup, warmup)
    };
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut n_mass = 0usize;
    let mut divergences = 0usize;

    for t in 0..warmup {
        kernel.step_size = da.current();
        let info = kernel.transition(target, rng, x, logp, grad);
        if info.diverged {
            divergences += 1;
        }
        da.update(info.accept_prob);

        if t >= mass_start && t < mass_end {
            for i in 0..dim {
                sum[i] += x[i];
                sum_sq[i] += x[i] * x[i];
            }
            n_mass += 1;
        }
        if t + 1 == mass_end && n_mass >= 10 {
            let n = n_mass as f64;
            for i in 0..dim {
                let var = (sum_sq[i] - sum[i] * sum[i] / n) / (n - 1.0);
                // shrink toward a small floor, as a guard against a
                // degenerate window
                kernel.inv_mass[i] = (n / (n + 5.0) * var + 5.0 / (n + 5.0) * 1e-3).max(1e-8);
            }
            kernel.step_size =
                find_reasonable_step_size(target, rng, &kernel.inv_mass, x, *logp);
            da = DualAveraging::new(kernel.step_size, target_accept);
        }
    }

    if divergences == warmup {
        return Err(format!("all {warmup} warmup transitions diverged"));
    }
    Ok(AdaptedParams {
        step_size: da.adapted(),
        inv_mass: kernel.inv_mass,
    })
}

/// Posterior draws: chains x stored iterations x named parameters, plus
/// per-chain acceptance statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawsMatrix {
    names: Vec<String>,
    n_chains: usize,
    n_draws: usize,
    data: Vec<f64>,
    pub accept_rate: Vec<f64>,
    pub divergences: Vec<usize>,
    pub step_sizes: Vec<f64>,
}

impl DrawsMatrix {
    pub fn new(names: Vec<String>, n_chains: usize, n_draws: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n_chains * n_draws * names.len());
        assert!(data.iter().all(|v| v.is_finite()), "draws must be finite");
        DrawsMatrix {
            names,
            n_chains,
            n_draws,
            data,
            accept_rate: Vec::new(),
            divergences: Vec::new(),
            step_sizes: Vec::new(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    /// Stored draws per chain.
    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, chain: usize, draw: usize, param: usize) -> f64 {
        self.data[(chain * self.n_draws + draw) * self.names.len() + param]
    }

    /// All stored values of one parameter in one chain.
    pub fn chain_values(&self, chain: usize, param: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.value(chain, d, param)).collect()
    }

    /// Per-chain series for one parameter.
    pub fn per_chain(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains).map(|c| self.chain_values(c, param)).collect()
    }

    /// All chains pooled, chain-major.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        (0..self.n_chains)
            .flat_map(|c| (0..self.n_draws).map(move |d| (c, d)))
            .map(|(c, d)| self.value(c, d, param))
            .collect()
    }

    /// One stored draw as a parameter slice.
    pub fn draw(&self, chain: usize, draw: usize) -> &[f64] {
        let np = self.names.len();
        let start = (chain * self.n_draws + draw) * np;
        &self.data[start..start + np]
    }

    pub fn to_csv_string(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("chain,iter");
        for name in &self.names {
            out.push(',');
            out.push_str(&crate::csvio::escape(name));
        }
        out.push('\n');
        for c in 0..self.n_chains {
            for d in 0..self.n_draws {
                let _ = write!(out, "{},{}", c + 1, d + 1);
                for p in 0..self.names.len() {
                    let _ = write!(out, ",{}", self.value(c, d, p));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self, SamplerError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SamplerError::Format("empty draws file".to_string()))?;
        let cells = crate::csvio::split_line(header).map_err(SamplerError::Format)?;
        if cells.len() < 3 || cells[0] != "chain" || cells[1] != "iter" {
            return Err(SamplerError::Format(
                "header must start with chain,iter".to_string(),
            ));
        }
        let names: Vec<String> = cells[2..].to_vec();
        let mut per_chain: Vec<Vec<f64>> = Vec::new();
        let mut draws_per_chain: Vec<usize> = Vec::new();
        for (idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row_err =
                |reason: String| SamplerError::Format(format!("line {}: {reason}", idx + 2));
            let cells = crate::csvio::split_line(line).map_err(&row_err)?;
            if cells.len() != names.len() + 2 {
                return Err(row_err(format!(
                    "expected {} columns, found {}",
                    names.len() + 2,
                    cells.len()
                )));
            }
            let chain: usize = cells[0]
                .parse()
                .map_err(|_| row_err(format!("bad chain id `{}`", cells[0])))?;
            if chain == 0 {
                return Err(row_err("chain ids are 1-based".to_string()));
            }
            while per_chain.len() < chain {
                per_chain.push(Vec::new());
                draws_per_chain.push(0);
            }
            for cell in &cells[2..] {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| row_err(format!("bad value `{cell}`")))?;
                if !v.is_finite() {
                    return Err(row_err(format!("non-finite value `{cell}`")));
                }
                per_chain[chain - 1].push(v);
            }
            draws_per_chain[chain - 1] += 1;
        }
        let n_chains = per_chain.len();
        if n_chains == 0 {
            return Err(SamplerError::Format("no draws".to_string()));
        }
        let n_draws = draws_per_chain[0];
        if n_draws == 0 || draws_per_chain.iter().any(|&d| d != n_draws) {
            return Err(SamplerError::Format(
                "chains have unequal or zero draw counts".to_string(),
            ));
        }
        let data: Vec<f64> = per_chain.into_iter().flatten().collect();
        Ok(DrawsMatrix::new(names, n_chains, n_draws, data))
    }

    pub fn from_csv(path: &std::path::Path) -> Result<Self, SamplerError> {
        let text = std::fs::read_to_string(path).map_err(|source| SamplerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_str(&text)
    }
}

struct ChainOutput {
    rows: Vec<f64>,
    accept_rate: f64,
    divergences: usize,
    step_size: f64,
}

fn run_chain(
    posterior: &Posterior<'_>,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput, String> {
    let layout = posterior.layout();
    let dim = layout.len();
    let mut rng = stream_rng(cfg.seed, chain as u64);

    let mut x = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut logp = f64::NEG_INFINITY;
    let mut initialized = false;
    for _ in 0..100 {
        for xi in x.iter_mut() {
            *xi = rng.random_range(-cfg.init_radius..cfg.init_radius);
        }
        logp = posterior.logp_and_grad(&x, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            initialized = true;
            break;
        }
    }
    if !initialized {
        return Err("no finite starting point found in 100 attempts".to_string());
    }

    let adapted = adapt_warmup(
        posterior,
        &mut rng,
        &mut x,
        &mut logp,
        &mut grad,
        cfg.warmup,
        cfg.target_accept,
        cfg.max_leapfrog_steps,
    )?;
    let mut kernel = HmcKernel::new(dim, adapted.step_size, cfg.max_leapfrog_steps);
    kernel.inv_mass = adapted.inv_mass;

    let kept = cfg.iters - cfg.warmup;
    let n_out = layout.len() + layout.nweeks * layout.nteams;
    let mut rows = Vec::with_capacity(kept * n_out);
    let mut accept_sum = 0.0;
    let mut divergences = 0usize;
    let prevperf = &posterior.features().prevperf;

    for _ in 0..kept {
        let info = kernel.transition(posterior, &mut rng, &mut x, &mut logp, &mut grad);
        accept_sum += info.accept_prob;
        if info.diverged {
            divergences += 1;
        }
        push_constrained_row(&layout, &x, prevperf, &mut rows);
    }

    Ok(ChainOutput {
        rows,
        accept_rate: accept_sum / kept as f64,
        divergences,
        step_size: kernel.step_size,
    })
}

/// Appends the constrained view of an unconstrained draw: coefficients,
/// nu, sigma_y, sigma_a, eta, then the derived abilities.
fn push_constrained_row(layout: &ParamLayout, x: &[f64], prevperf: &[f64], rows: &mut Vec<f64>) {
    let n_betas = layout.n_betas();
    rows.extend_from_slice(&x[..n_betas]);
    rows.push(x[layout.log_nu()].exp());
    rows.push(x[layout.log_sigma_y()].exp());
    let sa0 = layout.sigma_a_start();
    let eta0 = layout.eta_start();
    rows.extend_from_slice(&x[sa0..sa0 + layout.nteams]);
    rows.extend_from_slice(&x[eta0..]);
    // forward ability recursion
    let base = rows.len();
    for t in 0..layout.nteams {
        rows.push(x[ParamLayout::B_PREV] * prevperf[t] + x[eta0 + t]);
    }
    for w in 1..layout.nweeks {
        for t in 0..layout.nteams {
            let prev = rows[base + (w - 1) * layout.nteams + t];
            rows.push(prev + x[sa0 + t] * x[eta0 + w * layout.nteams + t]);
        }
    }
}

/// Fits the model by multi-chain HMC and returns post-warmup draws.
pub fn run_sampler(
    features: &FeatureSet,
    model_config: &ModelConfig,
    sampler_config: &SamplerConfig,
) -> Result<DrawsMatrix, SamplerError> {
    sampler_config.validate()?;
    let posterior = Posterior::new(features, model_config)?;
    let layout = posterior.layout();

    let outputs: Vec<Result<ChainOutput, String>> = (0..sampler_config.chains)
        .into_par_iter()
        .map(|chain| run_chain(&posterior, sampler_config, chain))
        .collect();

    let mut names = layout.names();
    names.extend(layout.ability_names());
    let kept = sampler_config.iters - sampler_config.warmup;
    let mut data = Vec::with_capacity(sampler_config.chains * kept * names.len());
    let mut accept_rate = Vec::new();
    let mut divergences = Vec::new();
    let mut step_sizes = Vec::new();
    for (chain, out) in outputs.into_iter().enumerate() {
        let out = out.map_err(|reason| SamplerError::Chain { chain, reason })?;
        data.extend(out.rows);
        accept_rate.push(out.accept_rate);
        divergences.push(out.divergences);
        step_sizes.push(out.step_size);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(SamplerError::Chain {
            chain: usize::MAX,
            reason: "non-finite draw".to_string(),
        });
    }
    let mut draws = DrawsMatrix::new(names, sampler_config.chains, kept, data);
    draws.accept_rate = accept_rate;
    draws.divergences = divergences;
    draws.step_sizes = step_sizes;
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Standard normal in `dim` dimensions.
    struct StdNormal {
        dim: usize,
    }

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.dim
        }

        fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g = -xi;
                lp -= 0.5 * xi * xi;
            }
            lp
        }
    }

    /// Independent zero-mean normal with per-coordinate variances.
    struct DiagNormal {
        vars: Vec<f64>,
    }

    impl LogDensity for DiagNormal {
        fn dim(&self) -> usize {
            self.vars.len()
        }

        fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for ((g, xi), v) in grad.iter_mut().zip(x).zip(&self.vars) {
                *g = -xi / v;
                lp -= 0.5 * xi * xi / v;
            }
            lp
        }
    }

    #[test]
    fn leapfrog_is_reversible() {
        let target = StdNormal { dim: 3 };
        let inv_mass = vec![1.0, 0.5, 2.0];
        let x0 = vec![0.3, -1.1, 0.7];
        let p0 = vec![0.9, 0.2, -0.4];
        let (x1, p1, _) = leapfrog(&target, &inv_mass, &x0, &p0, 0.05, 40);
        let p1_neg: Vec<f64> = p1.iter().map(|p| -p).collect();
        let (x2, p2, _) = leapfrog(&target, &inv_mass, &x1, &p1_neg, 0.05, 40);
        for i in 0..3 {
            assert!((x2[i] - x0[i]).abs() < 1e-8);
            assert!((-p2[i] - p0[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn leapfrog_matches_harmonic_oscillator() {
        // unit-mass standard normal: x(t) = x0 cos t + p0 sin t
        let target = StdNormal { dim: 1 };
        let inv_mass = vec![1.0];
        let (x0, p0, t_end) = (1.0, 0.5, 1.0);
        let err_at = |eps: f64| {
            let n = (t_end / eps).round() as usize;
            let (x, _, _) = leapfrog(&target, &inv_mass, &[x0], &[p0], eps, n);
            (x[0] - (x0 * t_end.cos() + p0 * t_end.sin())).abs()
        };
        let coarse = err_at(0.01);
        let fine = err_at(0.005);
        assert!(coarse < 1e-4, "coarse error {coarse}");
        // halving the step should reduce the error about fourfold
        let ratio = coarse / fine;
        assert!((3.0..5.0).contains(&ratio), "order ratio {ratio}");
    }

    #[test]
    fn leapfrog_conserves_energy_in_small_step_limit() {
        let target = StdNormal { dim: 2 };
        let inv_mass = vec![1.0, 1.0];
        let x0: [f64; 2] = [0.4, -0.9];
        let p0: [f64; 2] = [0.8, 0.3];
        let h0 = 0.5 * (x0[0].powi(2) + x0[1].powi(2)) + 0.5 * (p0[0].powi(2) + p0[1].powi(2));
        let (_, _, energies) = leapfrog(&target, &inv_mass, &x0, &p0, 1e-6, 50);
        let mut prev = h0;
        for h in energies {
            assert!((h - prev).abs() < 1e-10, "per-step drift {}", (h - prev).abs());
            prev = h;
        }
    }

    #[test]
    fn transition_accepts_downhill_proposals() {
        let target = StdNormal { dim: 2 };
        let mut rng = stream_rng(5, 0);
        let mut kernel = HmcKernel::new(2, 0.3, 8);
        let mut x = vec![2.0, -2.0];
        let mut grad = vec![0.0; 2];
        let mut logp = target.logp_and_grad(&x, &mut grad);
        for _ in 0..200 {
            let info = kernel.transition(&target, &mut rng, &mut x, &mut logp, &mut grad);
            if info.accept_prob >= 1.0 {
                assert!(info.accepted, "proposal with lower Hamiltonian must be accepted");
            }
        }
    }

    #[test]
    fn transition_samples_standard_normal() {
        let target = StdNormal { dim: 2 };
        let mut rng = stream_rng(42, 0);
        let mut kernel = HmcKernel::new(2, 0.3, 8);
        let mut x = vec![0.0, 0.0];
        let mut grad = vec![0.0; 2];
        let mut logp = target.logp_and_grad(&x, &mut grad);

        let n = 50_000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        let mut cross = 0.0f64;
        for _ in 0..n {
            kernel.transition(&target, &mut rng, &mut x, &mut logp, &mut grad);
            sums[0] += x[0];
            sums[1] += x[1];
            sq[0] += x[0] * x[0];
            sq[1] += x[1] * x[1];
            cross += x[0] * x[1];
        }
        let nf = n as f64;
        for i in 0..2 {
            let mean = sums[i] / nf;
            let var = sq[i] / nf - mean * mean;
            assert!(mean.abs() < 0.05, "mean[{i}] = {mean}");
            assert!((var - 1.0).abs() < 0.1, "var[{i}] = {var}");
        }
        let cov = cross / nf - (sums[0] / nf) * (sums[1] / nf);
        assert!(cov.abs() < 0.1, "cov = {cov}");
    }

    #[test]
    fn transition_is_deterministic_given_seed() {
        let target = StdNormal { dim: 3 };
        let run = || {
            let mut rng = stream_rng(7, 2);
            let mut kernel = HmcKernel::new(3, 0.25, 10);
            let mut x = vec![0.1, 0.2, 0.3];
            let mut grad = vec![0.0; 3];
            let mut logp = target.logp_and_grad(&x, &mut grad);
            for _ in 0..500 {
                kernel.transition(&target, &mut rng, &mut x, &mut logp, &mut grad);
            }
            x
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "same substream must reproduce the chain bitwise");
    }

    #[test]
    fn warmup_recovers_scale_ratio() {
        let target = DiagNormal {
            vars: vec![1.0, 100.0],
        };
        let mut rng = stream_rng(11, 0);
        let mut x = vec![0.5, 5.0];
        let mut grad = vec![0.0; 2];
        let mut logp = target.logp_and_grad(&x, &mut grad);
        let adapted =
            adapt_warmup(&target, &mut rng, &mut x, &mut logp, &mut grad, 2000, 0.8, 128).unwrap();
        let ratio = adapted.inv_mass[1] / adapted.inv_mass[0];
        assert!(
            ratio > 50.0 && ratio < 200.0,
            "mass ratio {ratio} not within factor 2 of 100"
        );
    }

    #[test]
    fn warmup_hits_target_acceptance() {
        let target = DiagNormal {
            vars: vec![1.0, 4.0, 0.25, 9.0],
        };
        let mut rng = stream_rng(23, 0);
        let mut x = vec![0.0; 4];
        let mut grad = vec![0.0; 4];
        let mut logp = target.logp_and_grad(&x, &mut grad);
        let adapted =
            adapt_warmup(&target, &mut rng, &mut x, &mut logp, &mut grad, 800, 0.8, 128).unwrap();
        let mut kernel = HmcKernel::new(4, adapted.step_size, 128);
        kernel.inv_mass = adapted.inv_mass;
        let mut accept = 0.0;
        let n = 500;
        for _ in 0..n {
            accept += kernel
                .transition(&target, &mut rng, &mut x, &mut logp, &mut grad)
                .accept_prob;
        }
        let rate = accept / n as f64;
        assert!((0.6..=0.95).contains(&rate), "post-warmup acceptance {rate}");
    }

    #[test]
    fn warmup_step_size_stable_across_seeds() {
        let target = StdNormal { dim: 4 };
        let adapt = |seed: u64| {
            let mut rng = stream_rng(seed, 0);
            let mut x = vec![0.3; 4];
            let mut grad = vec![0.0; 4];
            let mut logp = target.logp_and_grad(&x, &mut grad);
            adapt_warmup(&target, &mut rng, &mut x, &mut logp, &mut grad, 600, 0.8, 128)
                .unwrap()
                .step_size
        };
        let (a, b) = (adapt(1), adapt(99));
        let ratio = if a > b { a / b } else { b / a };
        assert!(ratio < 2.0, "step sizes {a} and {b} differ by more than 2x");
    }

    /// Density whose gradient explodes: every trajectory diverges.
    struct Pathological;

    impl LogDensity for Pathological {
        fn dim(&self) -> usize {
            1
        }

        fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = 1e300;
            -x[0] * 1e300
        }
    }

    #[test]
    fn warmup_aborts_when_every_transition_diverges() {
        let target = Pathological;
        let mut rng = stream_rng(1, 0);
        let mut x = vec![0.5];
        let mut grad = vec![0.0];
        let mut logp = target.logp_and_grad(&x, &mut grad);
        let err = adapt_warmup(&target, &mut rng, &mut x, &mut logp, &mut grad, 50, 0.8, 16)
            .unwrap_err();
        assert!(err.contains("diverged"), "{err}");
    }

    #[test]
    fn draws_csv_round_trips() {
        let names = vec!["b_home".to_string(), "eta[1,2]".to_string()];
        let data = vec![0.1, -2.5, 0.30000000000000004, 1e-9, 4.0, 5.0, 6.0, 7.0];
        let mut draws = DrawsMatrix::new(names, 2, 2, data);
        draws.accept_rate = vec![0.9, 0.8];
        let reparsed = DrawsMatrix::from_csv_str(&draws.to_csv_string()).unwrap();
        assert_eq!(reparsed.names(), draws.names());
        assert_eq!(reparsed.n_chains(), 2);
        assert_eq!(reparsed.n_draws(), 2);
        for c in 0..2 {
            for d in 0..2 {
                for p in 0..2 {
                    assert_eq!(reparsed.value(c, d, p), draws.value(c, d, p));
                }
            }
        }
    }

    #[test]
    fn stream_seeds_differ_by_stream() {
        let a = derive_stream_seed(42, 0);
        let b = derive_stream_seed(42, 1);
        let c = derive_stream_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_stream_seed(42, 0));
    }
}
