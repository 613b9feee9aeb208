use rand::Rng;
use rayon::prelude::*;

use super::{assemble, Estimator, GFormulaResult, StandardizeOptions, Standardizer};
use crate::error::{Error, Result};
use crate::glm::fit_mle;
use crate::model::{ModelSpec, Regime};
use crate::panel::Panel;
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
    pub standardize: StandardizeOptions,
}

impl BootstrapConfig {
    pub fn new(resamples: usize, seed: u64) -> Self {
        BootstrapConfig { resamples, seed, standardize: StandardizeOptions::default() }
    }
}

struct Replicate {
    trajectories: [Vec<f64>; 2],
    diverged: bool,
}

/// Maximum-likelihood fits of every block, with the clamp flag of any block.
pub(crate) fn fit_all(spec: &ModelSpec, panel: &Panel) -> Result<(ModelSpec, bool)> {
    let mut fitted = spec.clone();
    let mut diverged = false;
    let mut theta = Vec::with_capacity(spec.n_params());
    for data in spec.block_data(panel)? {
        let fit = fit_mle(&data.design, &data.response, data.family)?;
        diverged |= fit.divergence_flag;
        theta.extend_from_slice(&fit.coefficients);
        if let Some(s) = fit.sigma {
            theta.push(s.ln());
        }
    }
    fitted.set_parameters(&theta)?;
    Ok((fitted, diverged))
}

fn one_resample(
    panel: &Panel,
    spec: &ModelSpec,
    regimes: (Regime, Regime),
    horizon: usize,
    opts: &StandardizeOptions,
    key: StreamKey,
) -> Result<Replicate> {
    let mut rng = key.rng();
    let n = panel.n_subjects();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let sample = panel.resample(&idx);
    let (fitted, diverged) = fit_all(spec, &sample)?;
    let st = Standardizer::new(&fitted, &sample, horizon)?;
    let a = opts.run(&st, &fitted, regimes.0, key.child(1))?;
    let b = opts.run(&st, &fitted, regimes.1, key.child(2))?;
    Ok(Replicate { trajectories: [a, b], diverged })
}

/// Bootstrap g-formula: refit on `resamples` subject-level resamples, point
/// estimate = mean of the per-resample contrasts, SE = their SD.
pub fn frequentist_gformula(
    panel: &Panel,
    spec: &ModelSpec,
    regimes: (Regime, Regime),
    horizon: usize,
    config: &BootstrapConfig,
) -> Result<GFormulaResult> {
    if config.resamples < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 resamples".into()));
    }
    panel.ensure_valid()?;
    // Structural problems (unknown columns, bad terms) fail here, not per resample.
    spec.block_data(panel)?;
    let root = StreamKey::new(config.seed);
    let results: Vec<Option<Replicate>> = (0..config.resamples)
        .into_par_iter()
        .map(|s| one_resample(panel, spec, regimes, horizon, &config.standardize, root.child(s as u64)).ok())
        .collect();
    let usable: Vec<&Replicate> = results.iter().flatten().collect();
    if usable.len() < 2 {
        return Err(Error::TooFewResamples { usable: usable.len() });
    }
    let divergence_count = usable.iter().filter(|r| r.diverged).count();
    let draws: Vec<[Vec<f64>; 2]> = usable.iter().map(|r| r.trajectories.clone()).collect();
    assemble(
        Estimator::Bootstrap,
        ModelSpec::outcome_times(horizon),
        regimes,
        &draws,
        divergence_count,
        None,
    )
}
