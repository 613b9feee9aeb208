//! Standardization of model-implied outcomes over the empirical baseline
//! distribution under a static regime.
//!
//! The exact route enumerates every path of the modelled (binary) covariates
//! for each baseline subject and weights it by its model probability; the
//! Monte Carlo route simulates pseudo-subjects forward in time. Both carry
//! survival for Bernoulli outcomes: mass that has had the event leaves the
//! risk set, and the reported mean at each time is the cumulative incidence.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::glm::expit;
use crate::model::{CompiledSpec, Family, ModelSpec, Regime};
use crate::panel::{ColumnKind, Panel};
use crate::terms::{ColumnRef, History};

/// Largest number of covariate paths per subject enumerated exactly.
pub const MAX_PATHS: usize = 1 << 20;

struct SimHistory {
    exposure: f64,
    /// `covariates[t][j]`.
    covariates: Vec<Vec<f64>>,
}

impl History for SimHistory {
    #[inline]
    fn value(&self, column: ColumnRef, t: usize) -> f64 {
        match column {
            ColumnRef::Exposure => self.exposure,
            ColumnRef::Covariate(j) => self.covariates[t][j],
        }
    }
}

/// Model structure resolved against a target population, reusable across
/// parameter values.
pub struct Standardizer<'a> {
    panel: &'a Panel,
    compiled: CompiledSpec,
    horizon: usize,
    outcome_times: Vec<usize>,
    baseline_rows: Vec<usize>,
    exact_error: Option<Error>,
}

impl<'a> Standardizer<'a> {
    pub fn new(spec: &ModelSpec, panel: &'a Panel, horizon: usize) -> Result<Self> {
        let compiled = spec.compile(panel)?;
        let baseline_rows = (0..panel.n_subjects())
            .map(|s| panel.row_at(s, 0).ok_or_else(|| Error::InvalidArgument(format!("subject {} has no baseline row", panel.subject_id(s)))))
            .collect::<Result<Vec<_>>>()?;
        let mut exact_error = None;
        for (j, _) in &compiled.covariates {
            let col = &panel.covariates()[*j];
            if col.kind() != ColumnKind::Binary {
                exact_error = Some(Error::ContinuousCovariate(col.name().to_string()));
            }
        }
        if exact_error.is_none() {
            let paths = 2f64.powi((compiled.covariates.len() * ModelSpec::covariate_times(horizon).len()) as i32);
            if paths > MAX_PATHS as f64 {
                exact_error = Some(Error::PathGuard { paths, limit: MAX_PATHS });
            }
        }
        Ok(Standardizer {
            panel,
            compiled,
            horizon,
            outcome_times: ModelSpec::outcome_times(horizon),
            baseline_rows,
            exact_error,
        })
    }

    pub fn outcome_times(&self) -> &[usize] {
        &self.outcome_times
    }

    pub fn exact_available(&self) -> bool {
        self.exact_error.is_none()
    }

    fn history_for(&self, row: usize, regime: Regime) -> SimHistory {
        let base: Vec<f64> = self.panel.covariates().iter().map(|c| c.values()[row]).collect();
        SimHistory { exposure: regime.value(), covariates: vec![base; self.horizon + 1] }
    }

    /// Exact mean outcome at each outcome time.
    pub fn exact(&self, spec: &ModelSpec, regime: Regime) -> Result<Vec<f64>> {
        if let Some(e) = &self.exact_error {
            return Err(match e {
                Error::ContinuousCovariate(c) => Error::ContinuousCovariate(c.clone()),
                Error::PathGuard { paths, limit } => Error::PathGuard { paths: *paths, limit: *limit },
                other => Error::InvalidArgument(other.to_string()),
            });
        }
        let mut acc = vec![0.0; self.horizon + 1];
        let mut walker = Walker { spec, compiled: &self.compiled, horizon: self.horizon, acc: &mut acc };
        for &row in &self.baseline_rows {
            let mut h = self.history_for(row, regime);
            walker.time(&mut h, 0, 1.0);
        }
        let n = self.baseline_rows.len() as f64;
        Ok(self.finish(spec, acc, n))
    }

    /// Per-time contributions → per-outcome-time means (cumulative for
    /// Bernoulli outcomes).
    fn finish(&self, spec: &ModelSpec, acc: Vec<f64>, n: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.outcome_times.len());
        let mut running = 0.0;
        for &t in &self.outcome_times {
            let v = acc[t] / n;
            match spec.outcome.family {
                Family::BernoulliLogit => {
                    running += v;
                    out.push(running.clamp(0.0, 1.0));
                }
                Family::GaussianIdentity => out.push(v),
            }
        }
        out
    }

    /// Monte Carlo mean outcome at each outcome time from `n_pseudo`
    /// simulated subjects drawn from the baseline rows.
    pub fn monte_carlo<R: Rng + ?Sized>(&self, spec: &ModelSpec, regime: Regime, n_pseudo: usize, rng: &mut R) -> Result<Vec<f64>> {
        if n_pseudo == 0 {
            return Err(Error::InvalidArgument("n_pseudo must be at least 1".into()));
        }
        let sigma = |m: &crate::model::SubModel| m.sigma.unwrap_or(1.0);
        let mut acc = vec![0.0; self.horizon + 1];
        for _ in 0..n_pseudo {
            let row = self.baseline_rows[rng.random_range(0..self.baseline_rows.len())];
            let mut h = self.history_for(row, regime);
            for t in 0..=self.horizon {
                if t >= 1 {
                    for ((j, terms), model) in self.compiled.covariates.iter().zip(&spec.covariates) {
                        let lp = terms.linear_predictor(&h, t, &model.coefficients);
                        h.covariates[t][*j] = match model.family {
                            Family::BernoulliLogit => (rng.random::<f64>() < expit(lp)) as u8 as f64,
                            Family::GaussianIdentity => lp + sigma(model) * rng.sample::<f64, _>(StandardNormal),
                        };
                    }
                }
                if self.is_outcome_time(t) {
                    let lp = self.compiled.outcome.linear_predictor(&h, t, &spec.outcome.coefficients);
                    match spec.outcome.family {
                        Family::BernoulliLogit => {
                            if rng.random::<f64>() < expit(lp) {
                                acc[t] += 1.0;
                                break;
                            }
                        }
                        Family::GaussianIdentity => {
                            acc[t] += lp + sigma(&spec.outcome) * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                }
            }
        }
        Ok(self.finish(spec, acc, n_pseudo as f64))
    }

    fn is_outcome_time(&self, t: usize) -> bool {
        if self.horizon == 0 {
            t == 0
        } else {
            t >= 1
        }
    }
}

struct Walker<'s, 'c> {
    spec: &'s ModelSpec,
    compiled: &'c CompiledSpec,
    horizon: usize,
    acc: &'c mut Vec<f64>,
}

impl Walker<'_, '_> {
    fn time(&mut self, h: &mut SimHistory, t: usize, mass: f64) {
        if t > self.horizon || mass == 0.0 {
            return;
        }
        if t == 0 {
            self.outcome(h, t, mass);
        } else {
            self.covariate(h, t, 0, mass);
        }
    }

    fn covariate(&mut self, h: &mut SimHistory, t: usize, k: usize, mass: f64) {
        if k == self.compiled.covariates.len() {
            self.outcome(h, t, mass);
            return;
        }
        let (j, terms) = &self.compiled.covariates[k];
        let p = expit(terms.linear_predictor(h, t, &self.spec.covariates[k].coefficients));
        for (v, w) in [(1.0, p), (0.0, 1.0 - p)] {
            if w > 0.0 {
                h.covariates[t][*j] = v;
                self.covariate(h, t, k + 1, mass * w);
            }
        }
    }

    fn outcome(&mut self, h: &mut SimHistory, t: usize, mass: f64) {
        let at_outcome = if self.horizon == 0 { t == 0 } else { t >= 1 };
        let mut alive = mass;
        if at_outcome {
            let lp = self.compiled.outcome.linear_predictor(h, t, &self.spec.outcome.coefficients);
            match self.spec.outcome.family {
                Family::BernoulliLogit => {
                    let hazard = expit(lp);
                    self.acc[t] += mass * hazard;
                    alive = mass * (1.0 - hazard);
                }
                Family::GaussianIdentity => self.acc[t] += mass * lp,
            }
        }
        self.time(h, t + 1, alive);
    }
}

/// Exact standardized mean outcome at each outcome time (`0` for time-fixed
/// data, `1..=horizon` otherwise) under `regime`.
pub fn standardize_exact(spec: &ModelSpec, panel: &Panel, regime: Regime, horizon: usize) -> Result<Vec<f64>> {
    panel.ensure_valid()?;
    Standardizer::new(spec, panel, horizon)?.exact(spec, regime)
}

pub fn standardize_mc<R: Rng + ?Sized>(
    spec: &ModelSpec,
    panel: &Panel,
    regime: Regime,
    horizon: usize,
    n_pseudo: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    panel.ensure_valid()?;
    Standardizer::new(spec, panel, horizon)?.monte_carlo(spec, regime, n_pseudo, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelBuilder;
    use crate::rng::StreamKey;
    use crate::terms::TermList;

    fn time_fixed_panel() -> Panel {
        let mut b = PanelBuilder::new(ColumnKind::Binary, vec![("l".into(), ColumnKind::Binary)]);
        for (i, (x, l, y)) in [(1, 1, 1), (0, 1, 0), (1, 0, 0), (0, 0, 1), (1, 1, 0)].iter().enumerate() {
            b.push(format!("{i}"), 0, *y as f64, *x as f64, &[*l as f64]);
        }
        b.build().unwrap()
    }

    #[test]
    fn time_fixed_is_average_of_predictions() {
        let p = time_fixed_panel();
        let mut spec = ModelSpec::new(TermList::parse("1 + x + l").unwrap(), Family::BernoulliLogit);
        spec.outcome.coefficients = vec![-0.5, 0.8, 0.3];
        let got = standardize_exact(&spec, &p, Regime::ALWAYS, 0).unwrap();
        let ls = [1.0, 1.0, 0.0, 0.0, 1.0];
        let want = ls.iter().map(|l| expit(-0.5 + 0.8 + 0.3 * l)).sum::<f64>() / 5.0;
        assert_eq!(got.len(), 1);
        assert!((got[0] - want).abs() < 1e-15);
    }

    #[test]
    fn zero_exposure_coefficient_gives_equal_means() {
        let p = time_fixed_panel();
        let mut spec = ModelSpec::new(TermList::parse("1 + x + l").unwrap(), Family::BernoulliLogit);
        spec.outcome.coefficients = vec![0.2, 0.0, -1.0];
        let a = standardize_exact(&spec, &p, Regime::ALWAYS, 0).unwrap();
        let b = standardize_exact(&spec, &p, Regime::NEVER, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_outcome_is_one() {
        let p = time_fixed_panel();
        let mut spec = ModelSpec::new(TermList::intercept_only(), Family::BernoulliLogit);
        spec.outcome.coefficients = vec![1000.0];
        let mut rng = StreamKey::new(1).rng();
        assert_eq!(standardize_mc(&spec, &p, Regime::ALWAYS, 0, 100, &mut rng).unwrap(), vec![1.0]);
        assert_eq!(standardize_exact(&spec, &p, Regime::ALWAYS, 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn mc_is_deterministic() {
        let p = time_fixed_panel();
        let mut spec = ModelSpec::new(TermList::parse("1 + x").unwrap(), Family::BernoulliLogit);
        spec.outcome.coefficients = vec![0.1, 0.4];
        let a = standardize_mc(&spec, &p, Regime::ALWAYS, 0, 500, &mut StreamKey::new(9).rng()).unwrap();
        let b = standardize_mc(&spec, &p, Regime::ALWAYS, 0, 500, &mut StreamKey::new(9).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn real_covariate_blocks_exact_route() {
        let mut b = PanelBuilder::new(ColumnKind::Binary, vec![("w".into(), ColumnKind::Real)]);
        b.push("a", 0, 0.0, 0.0, &[0.5]).push("a", 1, 0.0, 1.0, &[1.5]);
        let p = b.build().unwrap();
        let spec = ModelSpec::new(TermList::parse("1 + w").unwrap(), Family::BernoulliLogit).with_covariate(
            "w",
            TermList::parse("1 + cumlag(x)").unwrap(),
            Family::GaussianIdentity,
        );
        assert!(matches!(standardize_exact(&spec, &p, Regime::ALWAYS, 1), Err(Error::ContinuousCovariate(_))));
        let mut rng = StreamKey::new(2).rng();
        assert!(standardize_mc(&spec, &p, Regime::ALWAYS, 1, 10, &mut rng).is_ok());
    }

    #[test]
    fn path_guard() {
        let mut b = PanelBuilder::new(ColumnKind::Binary, vec![("l".into(), ColumnKind::Binary)]);
        b.push("a", 0, 0.0, 0.0, &[0.0]);
        let p = b.build().unwrap();
        let spec = ModelSpec::new(TermList::parse("1 + l").unwrap(), Family::BernoulliLogit).with_covariate(
            "l",
            TermList::parse("1 + cumlag(l)").unwrap(),
            Family::BernoulliLogit,
        );
        assert!(standardize_exact(&spec, &p, Regime::ALWAYS, 20).is_ok());
        assert!(matches!(standardize_exact(&spec, &p, Regime::ALWAYS, 21), Err(Error::PathGuard { .. })));
    }
}
