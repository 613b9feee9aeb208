//! Effect estimation: standardization, the bootstrap (frequentist) g-formula
//! and the Bayesian g-formula over posterior draws.

mod bayes;
mod frequentist;
mod standardize;
mod summary;

use std::io::Write;

pub use bayes::bayesian_gformula;
pub use frequentist::{frequentist_gformula, BootstrapConfig};
pub use standardize::{standardize_exact, standardize_mc, Standardizer, MAX_PATHS};
pub use summary::{mean, quantile, sample_sd, summarize_effect, CiMethod, EffectEstimate, Interval, Z_975};

use crate::error::Result;
use crate::model::{ModelSpec, Regime};
use crate::rng::StreamKey;

/// How per-parameter standardization is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Standardization {
    /// Exact enumeration when possible, Monte Carlo otherwise.
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardizeOptions {
    pub method: Standardization,
    /// Pseudo-subjects per Monte Carlo standardization.
    pub n_pseudo: usize,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        StandardizeOptions { method: Standardization::Auto, n_pseudo: 10_000 }
    }
}

impl StandardizeOptions {
    pub(crate) fn run(
        &self,
        st: &Standardizer<'_>,
        spec: &ModelSpec,
        regime: Regime,
        key: StreamKey,
    ) -> Result<Vec<f64>> {
        let exact = match self.method {
            Standardization::Exact => true,
            Standardization::MonteCarlo => false,
            Standardization::Auto => st.exact_available(),
        };
        if exact {
            st.exact(spec, regime)
        } else {
            st.monte_carlo(spec, regime, self.n_pseudo, &mut key.rng())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Bootstrap,
    Bayes,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Bootstrap => "Standard",
            Estimator::Bayes => "Bayes",
        }
    }
}

/// Per-time summaries of one regime's standardized mean outcome.
#[derive(Debug, Clone)]
pub struct RegimeTrajectory {
    pub regime: Regime,
    pub means: Vec<EffectEstimate>,
}

#[derive(Debug, Clone)]
pub struct GFormulaResult {
    pub estimator: Estimator,
    pub times: Vec<usize>,
    pub trajectories: Vec<RegimeTrajectory>,
    /// First regime minus second, one per time.
    pub effects: Vec<EffectEstimate>,
    /// Bootstrap refits that hit the coefficient clamp.
    pub divergence_count: usize,
    /// Resamples or draws that entered the summaries.
    pub usable: usize,
    /// Per-block post-burn-in acceptance rates (Bayes only).
    pub acceptance_rate: Option<Vec<f64>>,
}

impl GFormulaResult {
    /// Contrast at the last time point.
    pub fn final_effect(&self) -> &EffectEstimate {
        self.effects.last().expect("at least one time point")
    }

    pub fn contrast_label(&self) -> String {
        format!("{}-{}", self.trajectories[0].regime, self.trajectories[1].regime)
    }

    /// CSV `regime,time,mean,se,ci_low,ci_high,ci_method`, with the contrast
    /// listed under the label `<a>-<b>`.
    pub fn write_report<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["regime", "time", "mean", "se", "ci_low", "ci_high", "ci_method"])?;
        let contrast = self.contrast_label();
        let mut rows: Vec<(String, &Vec<EffectEstimate>)> =
            self.trajectories.iter().map(|t| (t.regime.to_string(), &t.means)).collect();
        rows.push((contrast, &self.effects));
        for (label, ests) in rows {
            for (t, e) in self.times.iter().zip(ests) {
                for m in [CiMethod::Wald, CiMethod::Percentile] {
                    let ci = e.interval(m);
                    w.write_record([
                        label.clone(),
                        t.to_string(),
                        format!("{}", e.point),
                        format!("{}", e.se),
                        format!("{}", ci.low),
                        format!("{}", ci.high),
                        m.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds a result from per-draw trajectories `draws[i][regime][time]`.
pub(crate) fn assemble(
    estimator: Estimator,
    times: Vec<usize>,
    regimes: (Regime, Regime),
    draws: &[[Vec<f64>; 2]],
    divergence_count: usize,
    acceptance_rate: Option<Vec<f64>>,
) -> Result<GFormulaResult> {
    let series = |f: &dyn Fn(&[Vec<f64>; 2]) -> f64| -> Vec<f64> { draws.iter().map(f).collect() };
    let mut trajectories = Vec::with_capacity(2);
    for (r, regime) in [regimes.0, regimes.1].into_iter().enumerate() {
        let means = (0..times.len())
            .map(|k| summarize_effect(&series(&|d| d[r][k]), None).map(|s| s.0))
            .collect::<Result<Vec<_>>>()?;
        trajectories.push(RegimeTrajectory { regime, means });
    }
    let effects = (0..times.len())
        .map(|k| summarize_effect(&series(&|d| d[0][k] - d[1][k]), None).map(|s| s.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(GFormulaResult {
        estimator,
        times,
        trajectories,
        effects,
        divergence_count,
        usable: draws.len(),
        acceptance_rate,
    })
}
