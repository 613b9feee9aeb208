use rayon::prelude::*;

use super::{assemble, Estimator, GFormulaResult, StandardizeOptions, Standardizer};
use crate::error::Result;
use crate::mcmc::{sample_chain, Posterior, SamplerConfig};
use crate::model::{ModelSpec, PriorSpec, Regime};
use crate::panel::Panel;
use crate::rng::StreamKey;

/// Bayesian g-formula: sample the block parameters, then standardize each
/// retained draw over the observed baseline distribution under both regimes.
pub fn bayesian_gformula(
    panel: &Panel,
    spec: &ModelSpec,
    priors: &PriorSpec,
    regimes: (Regime, Regime),
    horizon: usize,
    sampler: &SamplerConfig,
    standardize: &StandardizeOptions,
) -> Result<GFormulaResult> {
    let posterior = Posterior::new(spec, priors, panel)?;
    let chain = sample_chain(sampler, &posterior)?;
    let st = Standardizer::new(spec, panel, horizon)?;
    // Monte Carlo fallback streams live under a key separate from the chain's.
    let root = StreamKey::new(sampler.seed).child(u64::MAX);
    let draws: Vec<[Vec<f64>; 2]> = chain
        .draws
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let s = spec.with_parameters(theta)?;
            let key = root.child(i as u64);
            Ok([
                standardize.run(&st, &s, regimes.0, key.child(1))?,
                standardize.run(&st, &s, regimes.1, key.child(2))?,
            ])
        })
        .collect::<Result<_>>()?;
    assemble(
        Estimator::Bayes,
        ModelSpec::outcome_times(horizon),
        regimes,
        &draws,
        0,
        Some(chain.acceptance_rate),
    )
}
