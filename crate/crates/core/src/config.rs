//! Flat `key = value` configuration files.
//!
//! Grammar: one entry per line, `key = value`, split at the first `=`; keys
//! and values are trimmed. Blank lines and lines starting with `#` are
//! ignored, as is anything after a ` #` inside a line. Keys may not repeat.
//!
//! Three files use this grammar:
//!
//! * model files: `outcome.family`, `outcome.terms`, `covariate.<name>.family`,
//!   `covariate.<name>.terms`, optional `covariates` (modelling order, comma
//!   separated; default is file order), `exposure.terms`, `horizon`, and
//!   `real_columns` (unmodelled continuous covariates);
//! * prior files: `intercept`, `slope`, `log_sigma`, `lasso = <rate>`, and
//!   per-parameter overrides keyed by parameter name such as `y:x`;
//! * run files: sampler, bootstrap and study settings, overridden by
//!   command-line flags.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec, Prior, PriorSpec};
use crate::panel::ColumnKind;
use crate::terms::TermList;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let line = match line.find(" #") {
                Some(p) => line[..p].trim_end(),
                None => line,
            };
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { line: i + 1, message: format!("expected `key = value`, got `{line}`") });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Parse { line: i + 1, message: "empty key".into() });
            }
            if entries.iter().any(|(e, _)| e == k) {
                return Err(Error::Parse { line: i + 1, message: format!("duplicate key `{k}`") });
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(KeyValues { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::InvalidArgument(format!("missing key `{key}`")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::InvalidArgument(format!("key `{key}`: bad value `{v}`: {e}"))))
            .transpose()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Fails on any key not accepted by `known`.
    pub fn check_keys(&self, known: impl Fn(&str) -> bool) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !known(k)) {
            Some((k, _)) => Err(Error::InvalidArgument(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

/// A parsed model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub spec: ModelSpec,
    pub horizon: Option<usize>,
    pub outcome_kind: ColumnKind,
    /// Covariate columns read as real numbers.
    pub real_columns: Vec<String>,
}

impl ModelFile {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(|k| {
            matches!(k, "outcome.family" | "outcome.terms" | "covariates" | "exposure.terms" | "horizon" | "real_columns")
                || (k.starts_with("covariate.") && (k.ends_with(".family") || k.ends_with(".terms")))
        })?;
        let family = Family::parse(kv.require("outcome.family")?)?;
        let mut spec = ModelSpec::new(TermList::parse(kv.require("outcome.terms")?)?, family);

        let mut order: Vec<String> = Vec::new();
        for (k, _) in kv.entries() {
            if let Some(rest) = k.strip_prefix("covariate.") {
                let name = rest.rsplit_once('.').map(|(n, _)| n).unwrap_or(rest);
                if !order.iter().any(|o| o == name) {
                    order.push(name.to_string());
                }
            }
        }
        if let Some(v) = kv.get("covariates") {
            let listed = list(v);
            let mut a = listed.clone();
            let mut b = order.clone();
            a.sort();
            b.sort();
            if a != b {
                return Err(Error::InvalidArgument(format!(
                    "`covariates` lists {listed:?} but models are given for {order:?}"
                )));
            }
            order = listed;
        }
        let mut real_columns = kv.get("real_columns").map(list).unwrap_or_default();
        for name in &order {
            let fam = Family::parse(kv.require(&format!("covariate.{name}.family"))?)?;
            let terms = TermList::parse(kv.require(&format!("covariate.{name}.terms"))?)?;
            if fam.column_kind() == ColumnKind::Real && !real_columns.contains(name) {
                real_columns.push(name.clone());
            }
            spec = spec.with_covariate(name, terms, fam);
        }
        if let Some(t) = kv.get("exposure.terms") {
            spec = spec.with_exposure_model(TermList::parse(t)?);
        }
        Ok(ModelFile {
            spec,
            horizon: kv.parse_value("horizon")?,
            outcome_kind: family.column_kind(),
            real_columns,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::read(path)?)
    }
}

/// Builds priors for `spec` from a prior file. Without any keys the result
/// is `N(ln 0.5, 1000)` intercepts and `N(0, 3)` slopes with flat `log σ`.
pub fn priors_from_kv(kv: &KeyValues, spec: &ModelSpec) -> Result<PriorSpec> {
    let names = spec.param_names();
    kv.check_keys(|k| matches!(k, "intercept" | "slope" | "log_sigma" | "lasso") || names.iter().any(|n| n == k))?;
    let lasso: Option<f64> = kv.parse_value("lasso")?;
    let (mut intercept, mut slope) = match lasso {
        Some(rate) => (Prior::Flat, Prior::DoubleExponential { mean: 0.0, rate }),
        None => (Prior::Normal { mean: 0.5f64.ln(), variance: 1000.0 }, Prior::Normal { mean: 0.0, variance: 3.0 }),
    };
    if let Some(v) = kv.get("intercept") {
        intercept = Prior::parse(v)?;
    }
    if let Some(v) = kv.get("slope") {
        slope = Prior::parse(v)?;
    }
    let log_sigma = kv.get("log_sigma").map(Prior::parse).transpose()?.unwrap_or(Prior::Flat);
    let mut priors = PriorSpec::uniform(spec, intercept, slope);
    for (bp, block) in priors.blocks.iter_mut().zip(spec.blocks()) {
        bp.log_scale = log_sigma;
        for (j, name) in block.terms.names().iter().enumerate() {
            if let Some(v) = kv.get(&format!("{}:{}", block.response, name)) {
                bp.coefficients[j] = Prior::parse(v)?;
            }
        }
        if let Some(v) = kv.get(&format!("{}:log_sigma", block.response)) {
            bp.log_scale = Prior::parse(v)?;
        }
    }
    priors.validate(spec)?;
    Ok(priors)
}
