use std::fmt;

use crate::error::{Error, Result};

/// Normal 97.5% quantile used for Wald intervals.
pub const Z_975: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiMethod {
    Wald,
    Percentile,
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiMethod::Wald => "wald",
            CiMethod::Percentile => "percentile",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }
}

/// Summary of a set of draws (posterior or bootstrap) of one quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub point: f64,
    pub se: f64,
    /// `point ± 1.96·se`.
    pub wald: Interval,
    /// 2.5th and 97.5th percentiles of the draws.
    pub percentile: Interval,
    pub draws: Vec<f64>,
}

impl EffectEstimate {
    pub fn interval(&self, method: CiMethod) -> Interval {
        match method {
            CiMethod::Wald => self.wald,
            CiMethod::Percentile => self.percentile,
        }
    }

    pub fn covers(&self, truth: f64, method: CiMethod) -> bool {
        self.interval(method).contains(truth)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (divisor `n − 1`).
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Linearly interpolated quantile of unsorted data (the usual "type 7").
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&s, q)
}

pub(crate) fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let h = (s.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Mean, SD, Wald and percentile intervals of `draws`; when `truth` is
/// given, also whether the Wald interval covers it.
pub fn summarize_effect(draws: &[f64], truth: Option<f64>) -> Result<(EffectEstimate, Option<bool>)> {
    if draws.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 draws, got {}", draws.len())));
    }
    let point = mean(draws);
    let se = sample_sd(draws);
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let est = EffectEstimate {
        point,
        se,
        wald: Interval { low: point - Z_975 * se, high: point + Z_975 * se },
        percentile: Interval { low: quantile_sorted(&sorted, 0.025), high: quantile_sorted(&sorted, 0.975) },
        draws: draws.to_vec(),
    };
    let covered = truth.map(|t| est.covers(t, CiMethod::Wald));
    Ok((est, covered))
}
