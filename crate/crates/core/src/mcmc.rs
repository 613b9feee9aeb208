//! Blockwise adaptive random-walk Metropolis over the outcome and covariate
//! model parameters.
//!
//! The joint likelihood factors into one term per block (the exposure block is
//! constant in the sampled parameters and dropped), so each block is updated
//! in turn against its own likelihood and prior only. Proposals are Gaussian,
//! shaped by the inverse curvature of the block log-posterior at the starting
//! point and scaled by a per-block step size that adapts during burn-in.

use std::io::Write;
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::glm::{bernoulli_unchecked, expit, fit_mle, gaussian_unchecked, weighted_gram};
use crate::linalg::inverse_cholesky;
use crate::model::{BlockData, Family, ModelSpec, Prior, PriorSpec};
use crate::panel::Panel;
use crate::rng::StreamKey;
use crate::terms::dot;

/// Number of burn-in iterations between step-size adjustments.
pub const ADAPT_WINDOW: usize = 50;
const ADAPT_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Post-burn-in iterations.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Multiplier on the curvature-shaped proposal; `None` uses `2.38/√d`
    /// for a block of dimension `d`.
    pub initial_step_scale: Option<f64>,
    pub adapt: bool,
    pub target_acceptance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 10_000,
            burn_in: 1_000,
            thin: 1,
            seed: 0,
            initial_step_scale: None,
            adapt: true,
            target_acceptance: 0.30,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in == 0 || self.thin == 0 {
            return Err(Error::InvalidArgument("iterations, burn-in and thin must be at least 1".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidArgument("target acceptance must lie in (0, 1)".into()));
        }
        if let Some(s) = self.initial_step_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument("initial step scale must be positive".into()));
            }
        }
        Ok(())
    }
}

pub fn prior_logdensity(value: f64, prior: &Prior) -> f64 {
    prior.log_density(value)
}

/// Unnormalised joint posterior of all sampled blocks.
#[derive(Debug, Clone)]
pub struct Posterior {
    spec: ModelSpec,
    priors: Vec<Prior>,
    blocks: Vec<BlockData>,
    ranges: Vec<Range<usize>>,
}

impl Posterior {
    pub fn new(spec: &ModelSpec, priors: &PriorSpec, panel: &Panel) -> Result<Self> {
        panel.ensure_valid()?;
        let blocks = spec.block_data(panel)?;
        Self::from_blocks(spec, priors, blocks)
    }

    pub fn from_blocks(spec: &ModelSpec, priors: &PriorSpec, blocks: Vec<BlockData>) -> Result<Self> {
        priors.validate(spec)?;
        if blocks.len() != spec.n_blocks() {
            return Err(Error::Dimension("block data does not match model".into()));
        }
        Ok(Posterior { spec: spec.clone(), priors: priors.flattened(spec), blocks, ranges: spec.block_ranges() })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.priors.len()
    }

    pub fn block_ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn blocks(&self) -> &[BlockData] {
        &self.blocks
    }

    /// `theta` is the block's own slice of the parameter vector.
    pub fn block_log_likelihood(&self, b: usize, theta: &[f64]) -> f64 {
        let data = &self.blocks[b];
        match data.family {
            Family::BernoulliLogit => bernoulli_unchecked(theta, &data.design, &data.response),
            Family::GaussianIdentity => {
                let p = data.design.cols();
                gaussian_unchecked(&theta[..p], theta[p].exp(), &data.design, &data.response)
            }
        }
    }

    /// `theta` is the block's own slice of the parameter vector.
    pub fn block_log_prior(&self, b: usize, theta: &[f64]) -> f64 {
        self.priors[self.ranges[b].clone()].iter().zip(theta).map(|(p, v)| p.log_density(*v)).sum()
    }

    fn block_log_posterior(&self, b: usize, theta: &[f64]) -> f64 {
        self.block_log_likelihood(b, theta) + self.block_log_prior(b, theta)
    }

    /// Sum over blocks of log-likelihood plus log-prior.
    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension(format!("expected {} parameters, got {}", self.n_params(), theta.len())));
        }
        for (i, (p, v)) in self.priors.iter().zip(theta).enumerate() {
            if !p.log_density(*v).is_finite() {
                return Err(Error::NonFinitePrior(i));
            }
        }
        Ok((0..self.blocks.len()).map(|b| self.block_log_posterior(b, &theta[self.ranges[b].clone()])).sum())
    }

    /// Per-block maximum-likelihood estimates, or zeros for blocks whose fit
    /// diverged or did not converge.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_params()];
        for (b, data) in self.blocks.iter().enumerate() {
            let r = self.ranges[b].clone();
            match fit_mle(&data.design, &data.response, data.family) {
                Ok(fit) if fit.converged && !fit.divergence_flag => {
                    theta[r.start..r.start + fit.coefficients.len()].copy_from_slice(&fit.coefficients);
                    if let Some(s) = fit.sigma {
                        theta[r.end - 1] = s.ln();
                    }
                }
                _ => {
                    if data.family == Family::GaussianIdentity {
                        let sd = sample_sd(&data.response).max(1e-3);
                        theta[r.end - 1] = sd.ln();
                    }
                }
            }
        }
        theta
    }

    /// `-∇² log posterior` of block `b` (row-major).
    fn block_curvature(&self, b: usize, theta: &[f64]) -> Vec<f64> {
        let data = &self.blocks[b];
        let x = &data.design;
        let priors = &self.priors[self.ranges[b].clone()];
        let d = theta.len();
        let mut h = match data.family {
            Family::BernoulliLogit => weighted_gram(x, |i| {
                let p = expit(dot(x.row(i), theta));
                p * (1.0 - p)
            }),
            Family::GaussianIdentity => {
                let p = x.cols();
                let s2 = (2.0 * theta[p]).exp();
                let gram = weighted_gram(x, |_| 1.0 / s2);
                let mut h = vec![0.0; d * d];
                for a in 0..p {
                    h[a * d..a * d + p].copy_from_slice(&gram[a * p..(a + 1) * p]);
                }
                let mut rss = 0.0;
                let mut xr = vec![0.0; p];
                for i in 0..x.rows() {
                    let r = data.response[i] - dot(x.row(i), &theta[..p]);
                    rss += r * r;
                    for (acc, v) in xr.iter_mut().zip(x.row(i)) {
                        *acc += v * r;
                    }
                }
                for a in 0..p {
                    h[a * d + p] = 2.0 * xr[a] / s2;
                    h[p * d + a] = 2.0 * xr[a] / s2;
                }
                h[p * d + p] = (2.0 * rss / s2).max(2.0);
                h
            }
        };
        for (j, pr) in priors.iter().enumerate() {
            h[j * d + j] += pr.precision();
        }
        h
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 1.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Convenience wrapper building the posterior from a panel.
pub fn log_posterior(theta: &[f64], spec: &ModelSpec, priors: &PriorSpec, panel: &Panel) -> Result<f64> {
    Posterior::new(spec, priors, panel)?.log_posterior(theta)
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub param_names: Vec<String>,
    /// Retained post-burn-in parameter vectors.
    pub draws: Vec<Vec<f64>>,
    /// Post-burn-in acceptance rate per block.
    pub acceptance_rate: Vec<f64>,
    /// Joint log-posterior at each retained draw.
    pub log_posterior: Vec<f64>,
    /// Step scales in effect after burn-in.
    pub step_scales: Vec<f64>,
}

impl ChainOutput {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }

    /// CSV with header `iter,<param names>,log_post`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["iter".to_string()];
        header.extend(self.param_names.iter().cloned());
        header.push("log_post".into());
        w.write_record(&header)?;
        for (i, (d, lp)) in self.draws.iter().zip(&self.log_posterior).enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(d.iter().map(|v| format!("{v}")));
            rec.push(format!("{lp}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn sample_chain(config: &SamplerConfig, posterior: &Posterior) -> Result<ChainOutput> {
    let init = posterior.initial_point();
    sample_chain_from(config, posterior, init)
}

pub fn sample_chain_from(config: &SamplerConfig, posterior: &Posterior, init: Vec<f64>) -> Result<ChainOutput> {
    config.validate()?;
    let ranges = posterior.block_ranges().to_vec();
    let nb = ranges.len();
    let mut theta = init;
    if theta.len() != posterior.n_params() {
        return Err(Error::Dimension("initial point has the wrong length".into()));
    }
    let mut block_lp: Vec<f64> =
        (0..nb).map(|b| posterior.block_log_posterior(b, &theta[ranges[b].clone()])).collect();
    if block_lp.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInitial);
    }

    let chol: Vec<Vec<f64>> = (0..nb)
        .map(|b| inverse_cholesky(&posterior.block_curvature(b, &theta[ranges[b].clone()]), ranges[b].len()))
        .collect();
    let mut scale: Vec<f64> = ranges
        .iter()
        .map(|r| config.initial_step_scale.unwrap_or(2.38 / (r.len() as f64).sqrt()))
        .collect();

    let mut rng = StreamKey::new(config.seed).rng();
    let total = config.burn_in + config.iterations;
    let keep = config.iterations / config.thin;
    let mut draws = Vec::with_capacity(keep);
    let mut lp_trace = Vec::with_capacity(keep);
    let mut window_acc = vec![0usize; nb];
    let mut kept_acc = vec![0usize; nb];
    let mut z = Vec::new();
    let mut proposal = Vec::new();

    for it in 0..total {
        for b in 0..nb {
            let r = ranges[b].clone();
            let d = r.len();
            z.clear();
            z.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            proposal.clear();
            proposal.extend_from_slice(&theta[r.clone()]);
            let l = &chol[b];
            for i in 0..d {
                let step: f64 = (0..=i).map(|j| l[i * d + j] * z[j]).sum();
                proposal[i] += scale[b] * step;
            }
            let lp_new = posterior.block_log_posterior(b, &proposal);
            let u: f64 = rng.random();
            if lp_new.is_finite() && u.ln() < lp_new - block_lp[b] {
                theta[r].copy_from_slice(&proposal);
                block_lp[b] = lp_new;
                if it < config.burn_in {
                    window_acc[b] += 1;
                } else {
                    kept_acc[b] += 1;
                }
            }
        }

        if it < config.burn_in && config.adapt && (it + 1) % ADAPT_WINDOW == 0 {
            for b in 0..nb {
                let rate = window_acc[b] as f64 / ADAPT_WINDOW as f64;
                if rate > config.target_acceptance + 0.1 {
                    scale[b] *= ADAPT_FACTOR;
                } else if rate < config.target_acceptance - 0.1 {
                    scale[b] /= ADAPT_FACTOR;
                }
                window_acc[b] = 0;
            }
        }
        if it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0 {
            draws.push(theta.clone());
            lp_trace.push(block_lp.iter().sum());
        }
    }

    Ok(ChainOutput {
        param_names: posterior.spec().param_names(),
        draws,
        acceptance_rate: kept_acc.iter().map(|&a| a as f64 / config.iterations as f64).collect(),
        log_posterior: lp_trace,
        step_scales: scale,
    })
}
